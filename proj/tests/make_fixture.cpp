#include <cstdio>

#include "fixture.hpp"

int main() {
  const auto& det = fixture::trained_detector();
  std::printf("fixture detector %s: %zu parameters\n", det.id().c_str(), det.parameter_count());
  return 0;
}
