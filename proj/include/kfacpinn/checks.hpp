#pragma once

#include <functional>
#include <string>
#include <vector>

namespace kfacpinn {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

using CheckCallback = std::function<void(const CheckResult&)>;

/// Fast oracle and property suite backing the `check` command.
std::vector<CheckResult> run_checks(const CheckCallback& on_result = {});

}  // namespace kfacpinn
