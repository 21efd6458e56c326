// Copyright 2026 The AdaFusion Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "adafusion_cli/commands.hpp"

int main(int argc, char** argv) {
  return adafusion::cli::run(argc, argv, std::cout, std::cerr);
}
