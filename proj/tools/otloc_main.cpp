#include "otloc/cli.hpp"

int main(int argc, char** argv) { return otloc::run_cli(argc, argv); }
