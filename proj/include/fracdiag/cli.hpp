#pragma once

#include <iosfwd>

namespace fracdiag {

// Entry point of the `fracdiag` binary. Exit codes: 0 success, 1 usage,
// 2 input format, 3 numerical failure. Errors print one
// `error_code: message` line to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fracdiag
