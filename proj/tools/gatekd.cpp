// SPDX-License-Identifier: Apache-2.0
#include "gatekd/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return gatekd::dispatch(argc, argv, std::cout, std::cerr); }
