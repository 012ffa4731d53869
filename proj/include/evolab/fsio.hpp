#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace evolab::fsio {

namespace fs = std::filesystem;

/// Throws StorageError when the file cannot be opened.
std::string read_file(const fs::path& path);

/// Writes to a sibling temp file, fsyncs, then renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view content);

/// Appends one line (a trailing newline is added) and fsyncs.
void append_line(const fs::path& path, std::string_view line);

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& value);

/// Exclusive or shared advisory lock on `<path>.lock`, held for the object's lifetime.
class FileLock {
public:
    enum class Mode { shared, exclusive };

    FileLock(const fs::path& path, Mode mode);
    ~FileLock();

    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace evolab::fsio
