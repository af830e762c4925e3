// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "arec/cli.hpp"

int main(int argc, char** argv) { return arec::cli::run(argc, argv, std::cout, std::cerr); }
