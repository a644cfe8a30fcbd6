// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
    return ats::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
