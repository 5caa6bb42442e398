#pragma once

#include <stdexcept>
#include <string>

namespace skiplab {

// Thrown when a forward/backward value turns non-finite (NaN/Inf).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on malformed specs, configs, or op preconditions.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on filesystem failures; message carries the path.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace skiplab
