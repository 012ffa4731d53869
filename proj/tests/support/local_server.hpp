#pragma once

#include <string>
#include <thread>

#include <httplib.h>

namespace evolab::testing {

/// httplib server on an ephemeral loopback port, served from a background thread.
struct LocalServer {
    httplib::Server server;
    int port = 0;
    std::jthread thread;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::jthread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() { server.stop(); }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
};

}  // namespace evolab::testing
