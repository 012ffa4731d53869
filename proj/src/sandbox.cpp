#include "evolab/sandbox.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <regex>

#include <fcntl.h>
#include <poll.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/text.hpp"

namespace evolab::experiment {

using nlohmann::json;

const char* to_string(Status s) {
    switch (s) {
        case Status::success: return "success";
        case Status::runtime_failure: return "runtime-failure";
        case Status::timeout: return "timeout";
        case Status::setup_failure: return "setup-failure";
    }
    return "setup-failure";
}

Status status_from_string(std::string_view s) {
    if (s == "success") return Status::success;
    if (s == "runtime-failure") return Status::runtime_failure;
    if (s == "timeout") return Status::timeout;
    if (s == "setup-failure") return Status::setup_failure;
    throw ParseError(fmt::format("unknown execution status '{}'", s));
}

void to_json(json& j, const CodeAttempt& v) {
    j = {{"id", v.id},
         {"stage_index", v.stage_index},
         {"attempt_index", v.attempt_index},
         {"source_files", v.source_files},
         {"parent_attempt_id", v.parent_attempt_id ? json(*v.parent_attempt_id) : json(nullptr)},
         {"diagnosis_applied", v.diagnosis_applied ? json(*v.diagnosis_applied) : json(nullptr)}};
}

void from_json(const json& j, CodeAttempt& v) {
    v.id = j.at("id").get<std::string>();
    v.stage_index = j.at("stage_index").get<int>();
    v.attempt_index = j.at("attempt_index").get<int>();
    v.source_files = j.at("source_files").get<std::map<std::string, std::string>>();
    v.parent_attempt_id.reset();
    v.diagnosis_applied.reset();
    if (j.contains("parent_attempt_id") && !j["parent_attempt_id"].is_null()) {
        v.parent_attempt_id = j["parent_attempt_id"].get<std::string>();
    }
    if (j.contains("diagnosis_applied") && !j["diagnosis_applied"].is_null()) {
        v.diagnosis_applied = j["diagnosis_applied"].get<std::string>();
    }
}

void to_json(json& j, const ExecutionRecord& v) {
    j = {{"attempt_id", v.attempt_id},   {"status", to_string(v.status)}, {"exit_code", v.exit_code},
         {"stdout_log", v.stdout_log},   {"stderr_log", v.stderr_log},     {"metrics", v.metrics},
         {"wall_time_s", v.wall_time_s}};
}

void from_json(const json& j, ExecutionRecord& v) {
    v.attempt_id = j.at("attempt_id").get<std::string>();
    v.status = status_from_string(j.at("status").get<std::string>());
    v.exit_code = j.at("exit_code").get<int>();
    v.stdout_log = j.at("stdout_log").get<std::string>();
    v.stderr_log = j.at("stderr_log").get<std::string>();
    v.metrics = j.at("metrics").get<std::map<std::string, double>>();
    v.wall_time_s = j.at("wall_time_s").get<double>();
}

std::map<std::string, double> parse_metrics(std::string_view stdout_text) {
    static const std::regex line_re(R"(^\s*METRIC\s+([A-Za-z0-9_./:-]+)\s*=\s*(\S+)\s*$)");
    std::map<std::string, double> out;
    for (const auto& line : text::split_lines(stdout_text)) {
        std::smatch m;
        if (!std::regex_match(line, m, line_re)) {
            continue;
        }
        const std::string value = m[2].str();
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(value.c_str(), &end);
        if (errno != 0 || end != value.c_str() + value.size() || !std::isfinite(v)) {
            continue;
        }
        out[m[1].str()] = v;
    }
    return out;
}

bool is_safe_source_path(std::string_view path) {
    if (path.empty() || path.front() == '/' || path.find('\\') != std::string_view::npos ||
        path.find('\0') != std::string_view::npos) {
        return false;
    }
    const fs::path p(path);
    for (const auto& part : p) {
        if (part == ".." || part == ".") {
            return false;
        }
    }
    return path != "stdout.log" && path != "stderr.log" && path != "record.json";
}

namespace {

// Accumulates output, keeping at most `cap` of the most recent bytes.
class TailBuffer {
public:
    explicit TailBuffer(std::size_t cap) : cap_(cap) {}

    void append(const char* data, std::size_t n) {
        total_ += n;
        buf_.append(data, n);
        if (buf_.size() > 2 * cap_ + 4096) {
            buf_.erase(0, buf_.size() - cap_);
        }
    }

    std::string str() const {
        if (total_ <= cap_) {
            return buf_;
        }
        return fmt::format("[... {} earlier bytes truncated ...]\n", total_ - cap_) + buf_.substr(buf_.size() - cap_);
    }

private:
    std::size_t cap_;
    std::size_t total_ = 0;
    std::string buf_;
};

ExecutionRecord setup_failure(const CodeAttempt& attempt, std::string message) {
    ExecutionRecord rec;
    rec.attempt_id = attempt.id;
    rec.status = Status::setup_failure;
    rec.exit_code = -1;
    rec.stderr_log = std::move(message);
    return rec;
}

}  // namespace

SubprocessSandbox::SubprocessSandbox(SandboxConfig config) : config_(std::move(config)) {
    if (config_.limits.wall_time_s <= 0 || config_.limits.max_log_bytes == 0) {
        throw ConfigError("sandbox limits must be positive");
    }
}

ExecutionRecord SubprocessSandbox::execute(const CodeAttempt& attempt, const fs::path& workdir) {
    std::error_code ec;
    fs::remove_all(workdir, ec);
    fs::create_directories(workdir, ec);
    if (ec) {
        throw SetupError(fmt::format("cannot create sandbox directory {}: {}", workdir.string(), ec.message()));
    }
    for (const auto& [path, content] : attempt.source_files) {
        if (!is_safe_source_path(path)) {
            return setup_failure(attempt, fmt::format("refusing unsafe source path '{}'", path));
        }
        fsio::write_file_atomic(workdir / path, content);
    }
    if (!attempt.source_files.contains(config_.entry_file)) {
        return setup_failure(attempt, fmt::format("entry file '{}' is missing from the attempt", config_.entry_file));
    }

    std::vector<std::string> argv;
    const auto ext = fs::path(config_.entry_file).extension().string();
    if (auto it = config_.interpreters.find(ext); it != config_.interpreters.end()) {
        argv = it->second;
    } else {
        fs::permissions(workdir / config_.entry_file, fs::perms::owner_exec, fs::perm_options::add, ec);
    }
    argv.push_back(ext.empty() || !config_.interpreters.contains(ext) ? "./" + config_.entry_file : config_.entry_file);

    int out_pipe[2];
    int err_pipe[2];
    int exec_pipe[2];
    if (::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0 || ::pipe2(exec_pipe, O_CLOEXEC) != 0) {
        throw SetupError(fmt::format("pipe: {}", std::strerror(errno)));
    }

    std::vector<char*> cargv;
    for (auto& a : argv) {
        cargv.push_back(a.data());
    }
    cargv.push_back(nullptr);
    const std::string cwd = workdir.string();

    const auto start = std::chrono::steady_clock::now();
    const pid_t pid = ::fork();
    if (pid < 0) {
        throw SetupError(fmt::format("fork: {}", std::strerror(errno)));
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        const int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0) {
            ::dup2(devnull, STDIN_FILENO);
        }
        int err = 0;
        if (::chdir(cwd.c_str()) != 0) {
            err = errno;
        } else {
            ::execvp(cargv[0], cargv.data());
            err = errno;
        }
        [[maybe_unused]] auto n = ::write(exec_pipe[1], &err, sizeof(err));
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    ::close(exec_pipe[1]);

    TailBuffer out(config_.limits.max_log_bytes);
    TailBuffer err(config_.limits.max_log_bytes);
    bool timed_out = false;
    const auto deadline = start + std::chrono::duration<double>(config_.limits.wall_time_s);
    pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
    int open_fds = 2;
    char chunk[8192];
    while (open_fds > 0) {
        const auto now = std::chrono::steady_clock::now();
        if (!timed_out && now >= deadline) {
            timed_out = true;
            ::kill(-pid, SIGKILL);
        }
        int wait_ms = 100;
        if (!timed_out) {
            wait_ms = static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;
        }
        const int rc = ::poll(fds, 2, std::min(wait_ms, 1000));
        if (rc < 0 && errno != EINTR) {
            break;
        }
        for (int i = 0; i < 2; ++i) {
            if (fds[i].fd < 0 || (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) == 0) {
                continue;
            }
            const ssize_t n = ::read(fds[i].fd, chunk, sizeof(chunk));
            if (n > 0) {
                (i == 0 ? out : err).append(chunk, static_cast<std::size_t>(n));
            } else if (n == 0 || (errno != EINTR && errno != EAGAIN)) {
                ::close(fds[i].fd);
                fds[i].fd = -1;
                --open_fds;
            }
        }
        // A grandchild holding the pipes open must not keep us past the deadline.
        if (timed_out && std::chrono::steady_clock::now() > deadline + std::chrono::seconds(2)) {
            break;
        }
    }
    for (auto& f : fds) {
        if (f.fd >= 0) {
            ::close(f.fd);
        }
    }

    int wstatus = 0;
    while (::waitpid(pid, &wstatus, 0) < 0 && errno == EINTR) {
    }
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ::kill(-pid, SIGKILL);

    int exec_errno = 0;
    const bool exec_failed = ::read(exec_pipe[0], &exec_errno, sizeof(exec_errno)) == sizeof(exec_errno);
    ::close(exec_pipe[0]);

    ExecutionRecord rec;
    rec.attempt_id = attempt.id;
    rec.wall_time_s = elapsed;
    rec.stdout_log = out.str();
    rec.stderr_log = err.str();
    if (exec_failed) {
        rec.status = Status::setup_failure;
        rec.exit_code = -1;
        rec.stderr_log += fmt::format("cannot start '{}': {}\n", argv.front(), std::strerror(exec_errno));
        return rec;
    }
    if (WIFEXITED(wstatus)) {
        rec.exit_code = WEXITSTATUS(wstatus);
    } else if (WIFSIGNALED(wstatus)) {
        rec.exit_code = 128 + WTERMSIG(wstatus);
    }
    rec.metrics = parse_metrics(rec.stdout_log);
    if (timed_out) {
        rec.status = Status::timeout;
        rec.stderr_log += fmt::format("\n[killed after exceeding the {} s wall-time limit]\n", config_.limits.wall_time_s);
    } else if (rec.exit_code == 0 && !rec.metrics.empty()) {
        rec.status = Status::success;
    } else {
        rec.status = Status::runtime_failure;
        if (rec.exit_code == 0) {
            rec.stderr_log += "\n[exited 0 but printed no METRIC <name>=<value> line]\n";
        }
    }
    return rec;
}

}  // namespace evolab::experiment
