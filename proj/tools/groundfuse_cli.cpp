#include <iostream>

#include "cli_commands.hpp"

int main(int argc, char** argv) { return groundfuse::cli::run(argc, argv, std::cerr); }
