#include "babylm/cli.hpp"

int main(int argc, char** argv) { return babylm::cli::cli_main(argc, argv); }
