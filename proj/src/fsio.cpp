#include "evolab/fsio.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "evolab/errors.hpp"

namespace evolab::fsio {

namespace {

std::string errno_text() { return std::strerror(errno); }

void write_all(int fd, std::string_view data, const fs::path& path) {
    while (!data.empty()) {
        const ssize_t n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw StorageError(fmt::format("write to {} failed: {}", path.string(), errno_text()));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

}  // namespace

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StorageError(fmt::format("cannot open {}", path.string()));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
    static std::atomic<unsigned> counter{0};
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    const auto tmp = path.string() + fmt::format(".tmp{}.{}", ::getpid(), counter.fetch_add(1));
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) {
        throw StorageError(fmt::format("cannot create {}: {}", tmp, errno_text()));
    }
    try {
        write_all(fd, content, tmp);
    } catch (...) {
        ::close(fd);
        ::unlink(tmp.c_str());
        throw;
    }
    ::fsync(fd);
    ::close(fd);
    if (::rename(tmp.c_str(), path.c_str()) != 0) {
        ::unlink(tmp.c_str());
        throw StorageError(fmt::format("cannot rename {} to {}: {}", tmp, path.string(), errno_text()));
    }
}

void append_line(const fs::path& path, std::string_view line) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) {
        throw StorageError(fmt::format("cannot open {} for append: {}", path.string(), errno_text()));
    }
    std::string buf(line);
    buf.push_back('\n');
    try {
        write_all(fd, buf, path);
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::fsync(fd);
    ::close(fd);
}

nlohmann::json read_json(const fs::path& path) {
    const auto content = read_file(path);
    try {
        return nlohmann::json::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_json(const fs::path& path, const nlohmann::json& value) {
    write_file_atomic(path, value.dump(2) + "\n");
}

FileLock::FileLock(const fs::path& path, Mode mode) {
    const auto lock_path = path.string() + ".lock";
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        throw StorageError(fmt::format("cannot open lock {}: {}", lock_path, errno_text()));
    }
    const int op = mode == Mode::exclusive ? LOCK_EX : LOCK_SH;
    while (::flock(fd_, op) != 0) {
        if (errno != EINTR) {
            ::close(fd_);
            throw StorageError(fmt::format("cannot lock {}: {}", lock_path, errno_text()));
        }
    }
}

FileLock::~FileLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

}  // namespace evolab::fsio
