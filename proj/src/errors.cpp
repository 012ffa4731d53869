#include "evolab/errors.hpp"

namespace evolab {

const char* to_string(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::validation: return "validation";
        case ErrorCategory::not_found: return "not-found";
        case ErrorCategory::configuration: return "configuration";
        case ErrorCategory::storage: return "storage";
        case ErrorCategory::parse: return "parse";
        case ErrorCategory::consistency: return "consistency";
        case ErrorCategory::retryable: return "retryable";
        case ErrorCategory::protocol: return "protocol";
        case ErrorCategory::format: return "format";
        case ErrorCategory::setup: return "setup";
        case ErrorCategory::search: return "search";
    }
    return "unknown";
}

int exit_code_for(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::validation: return 3;
        case ErrorCategory::not_found: return 4;
        case ErrorCategory::configuration: return 5;
        case ErrorCategory::storage: return 6;
        case ErrorCategory::parse: return 7;
        case ErrorCategory::consistency: return 8;
        case ErrorCategory::retryable: return 9;
        case ErrorCategory::protocol: return 10;
        case ErrorCategory::format: return 11;
        case ErrorCategory::setup: return 12;
        case ErrorCategory::search: return 13;
    }
    return 1;
}

}  // namespace evolab
