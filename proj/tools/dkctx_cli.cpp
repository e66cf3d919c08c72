// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "dkctx/pipeline/cli.hpp"

int main(int argc, char** argv) { return dkctx::cli::run(argc, argv, std::cout, std::cerr); }
