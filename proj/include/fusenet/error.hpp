#pragma once

#include <stdexcept>
#include <string>

namespace fusenet {

// Error categories; the CLI maps them to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Violated preconditions (non-scalar loss, batch of 1 in train mode, ...).
struct ContractError : Error {
    using Error::Error;
};

// Invalid or unsupported configuration (unknown keys, bad ranges, >2 GMU modalities).
struct ConfigError : Error {
    using Error::Error;
};

// Feature-file ingestion failures (row-count mismatch, missing files).
struct IngestError : Error {
    using Error::Error;
};

// Malformed cell or line in a text input.
struct ParseError : Error {
    using Error::Error;
};

// Metric evaluation failures (absent class, degenerate comparison).
struct EvalError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Non-finite loss during training; the runner isolates it per run.
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace fusenet
