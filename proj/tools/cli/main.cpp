// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
  return neurodiff::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
