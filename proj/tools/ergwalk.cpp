#include <iostream>

#include "ergwalk/cli_app.hpp"

int main(int argc, char** argv) { return ergwalk::run_cli(argc, argv, std::cout, std::cerr); }
