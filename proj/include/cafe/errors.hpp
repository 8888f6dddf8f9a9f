#pragma once

#include <stdexcept>
#include <string>

namespace cafe {

// Base of every error the library throws; CLI and bindings catch this at the
// boundary and turn it into an exit code / Python exception.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A dataset line could not be parsed. Carries the 1-based line number.
struct ParseError : Error {
    ParseError(int line_no, const std::string& what)
        : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
    int line;
};

// Structurally valid input that violates an invariant (e.g. evidence index
// out of range).
struct ValidationError : Error {
    using Error::Error;
};

struct ArgumentError : Error {
    using Error::Error;
};

// Prompt does not fit the backend context window.
struct OverflowError : Error {
    OverflowError(int tokens, int limit)
        : Error("prompt of " + std::to_string(tokens) +
                " tokens exceeds context limit " + std::to_string(limit)),
          token_count(tokens), context_limit(limit) {}
    int token_count;
    int context_limit;
};

// Every key of an attention row was masked out.
struct DegenerateRowError : Error {
    explicit DegenerateRowError(int row)
        : Error("attention row " + std::to_string(row) + " has no unmasked keys"), row_index(row) {}
    int row_index;
};

struct IoError : Error {
    using Error::Error;
};

// Weight-file format violations (bad magic, tensor size mismatch, ...).
struct FormatError : Error {
    using Error::Error;
};

}  // namespace cafe
