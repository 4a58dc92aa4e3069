#pragma once

#include <stdexcept>
#include <string>

namespace pckid {

/// Malformed text input (CSV cells, ragged rows, bad numbers).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed binary input (IDX magic, truncation).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Linear-algebra failure (singular observed covariance, failed decomposition).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// A mixture component lost essentially all responsibility mass during EM.
/// Callers running ensembles catch this and re-initialize or skip the model.
struct DegenerateComponentError : NumericError {
    explicit DegenerateComponentError(const std::string& what) : NumericError(what) {}
};

}  // namespace pckid
