#pragma once
// Shared trained toy detector, cached on disk so the suites train it once.

#include <filesystem>

#include "appa/detector.hpp"
#include "appa/synthetic.hpp"

#ifndef APPA_FIXTURE_DIR
#define APPA_FIXTURE_DIR "."
#endif

namespace fixture {

inline const appa::ToyDetector& trained_detector() {
  static const appa::ToyDetector det = [] {
    const std::filesystem::path path = std::filesystem::path(APPA_FIXTURE_DIR) / "toy_fixture.bin";
    if (std::filesystem::exists(path)) {
      try {
        return appa::ToyDetector::load(path);
      } catch (const appa::Error&) {
      }
    }
    const appa::SyntheticSceneSpec spec;
    const auto train = appa::generate_synthetic_dataset(spec, 2000, 101);
    const auto val = appa::generate_synthetic_dataset(spec, 200, 102);
    appa::ToyTrainOptions opt;
    opt.epochs = 12;
    auto d = appa::train_toy_detector(train, 7, opt, {}, val);
    std::filesystem::create_directories(path.parent_path());
    d.save(path);
    return d;
  }();
  return det;
}

}  // namespace fixture
