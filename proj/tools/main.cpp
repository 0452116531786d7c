// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return trajlab::cli::run(argc, argv, std::cout, std::cerr); }
