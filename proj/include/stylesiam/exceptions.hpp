#pragma once

#include <stdexcept>
#include <string>

namespace stylesiam {

// Error categories map onto CLI exit codes: config -> 2, data -> 3, numeric -> 4.
// dim_error covers shape/contract violations surfaced to callers (exit 2).

struct dim_error : std::runtime_error {
    explicit dim_error(const std::string& what) : std::runtime_error(what) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stylesiam
