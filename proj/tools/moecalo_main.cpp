// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0
//
// moecalo CLI: synth | train | eval | generate | bench | ablate.
// Placeholder main, replaced by the full CLI.

#include "moecalo/config.hpp"
#include "moecalo/evaluation.hpp"

#include <cstdio>

int main() {
  std::puts("moecalo");
  return 0;
}
