// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "ellipcert/cli.hpp"

int main(int argc, char** argv) { return ellipcert::cli::run(argc, argv, std::cout, std::cerr); }
