#pragma once

#include <string>
#include <string_view>

#include <fmt/format.h>

#include "evolab/errors.hpp"

namespace evolab::detail {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // path plus query, at least "/"
};

inline SplitUrl split_url(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) {
        throw ConfigError(fmt::format("url '{}' has no scheme", url));
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string_view::npos) {
        return {std::string(url), "/"};
    }
    return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

}  // namespace evolab::detail
