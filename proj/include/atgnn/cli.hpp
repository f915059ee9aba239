#pragma once

namespace atgnn::cli {

// Dispatches the command line. Exit codes: 0 ok, 2 configuration error,
// 3 I/O or data error, 4 numeric failure, 1 anything else.
int run(int argc, const char* const* argv);

}  // namespace atgnn::cli
