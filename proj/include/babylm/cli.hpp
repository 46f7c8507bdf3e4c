#pragma once

namespace babylm::cli {

// Full command-line entry point. Returns 0 on success, 1 on usage errors,
// 2 on runtime failures.
int cli_main(int argc, const char* const* argv);

}  // namespace babylm::cli
