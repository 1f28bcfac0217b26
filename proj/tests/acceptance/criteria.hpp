#pragma once

#include <functional>
#include <string>
#include <vector>

namespace ccm::acceptance {

struct Outcome {
  enum class Status { pass, fail, skip } status = Status::fail;
  std::string detail;
};

struct Criterion {
  int id = 0;
  std::string title;
  /// Wall-clock budget in seconds; exceeding it fails the criterion.
  double budget_s = 0.0;
  std::function<Outcome()> run;
};

/// Criteria that run on generated data in minutes: 1, 2, 3, 4, 8, 9.
std::vector<Criterion> core_criteria();
/// Criteria that need the MNIST IDX files in $CCM_MNIST_DIR: 5, 6, 7.
std::vector<Criterion> splitmnist_criteria();

}  // namespace ccm::acceptance
