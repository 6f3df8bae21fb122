#pragma once

namespace otloc {

// Entry point for the otloc command-line tool. Exit codes: 0 success,
// 2 usage/config error, 3 data/model incompatibility, 4 numeric failure.
int run_cli(int argc, char** argv);

}  // namespace otloc
