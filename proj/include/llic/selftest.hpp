#pragma once

#include <functional>
#include <string>
#include <vector>

namespace llic {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick invariant checks across every module (a few seconds in total).
/// `on_result` sees each result as soon as it is available.
std::vector<SelfTestResult> run_selftest(const std::function<void(const SelfTestResult&)>& on_result = {});

}  // namespace llic
