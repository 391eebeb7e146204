#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fracdiag {

// Every failure surfaced by the library carries one of these categories.
// The CLI maps them onto exit codes (see exit_code()).
enum class ErrorCode {
    usage,
    dimension_too_small,
    scale_exceeds_dimension,
    unsupported_rank,
    invalid_argument,
    io,
    bad_magic,
    unsupported_version,
    truncated_payload,
    overlapping_extents,
    malformed_header,
    invariant_violation,
    not_found,
    numerical,
};

constexpr std::string_view code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::dimension_too_small: return "dimension_too_small";
    case ErrorCode::scale_exceeds_dimension: return "scale_exceeds_dimension";
    case ErrorCode::unsupported_rank: return "unsupported_rank";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io_error";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::truncated_payload: return "truncated_payload";
    case ErrorCode::overlapping_extents: return "overlapping_extents";
    case ErrorCode::malformed_header: return "malformed_header";
    case ErrorCode::invariant_violation: return "invariant_violation";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::numerical: return "numerical";
    }
    return "unknown";
}

// 1: usage, 2: input format / missing input, 3: non-finite numerics.
constexpr int exit_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::usage:
    case ErrorCode::dimension_too_small:
    case ErrorCode::scale_exceeds_dimension:
    case ErrorCode::unsupported_rank:
    case ErrorCode::invalid_argument:
        return 1;
    case ErrorCode::numerical:
        return 3;
    default:
        return 2;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace fracdiag
