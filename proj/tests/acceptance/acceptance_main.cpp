// Runs one group of acceptance criteria and prints one line per criterion.
// Exit status: 0 all passed, 1 any failed, 77 everything skipped.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <exception>
#include <string>

#include "criteria.hpp"

using ccm::acceptance::Criterion;
using ccm::acceptance::Outcome;

int main(int argc, char** argv) {
  std::string group = "core";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--group") && i + 1 < argc) {
      group = argv[++i];
    } else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--group core|splitmnist] [--only N]\n", argv[0]);
      return 2;
    }
  }
  std::vector<Criterion> criteria;
  if (group == "core") {
    criteria = ccm::acceptance::core_criteria();
  } else if (group == "splitmnist") {
    criteria = ccm::acceptance::splitmnist_criteria();
  } else {
    std::fprintf(stderr, "unknown group '%s'\n", group.c_str());
    return 2;
  }

  int passed = 0, failed = 0, skipped = 0;
  for (const Criterion& c : criteria) {
    if (only && c.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::Status::fail, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.status == Outcome::Status::pass && secs > c.budget_s) {
      o.status = Outcome::Status::fail;
      o.detail += "; over the time budget";
    }
    const char* tag = o.status == Outcome::Status::pass   ? "PASS"
                      : o.status == Outcome::Status::skip ? "SKIP"
                                                          : "FAIL";
    std::printf("[%s] criterion %d %s: %s (%.1f s, budget %.0f s)\n", tag, c.id, c.title.c_str(),
                o.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
    (o.status == Outcome::Status::pass ? passed : o.status == Outcome::Status::skip ? skipped
                                                                                    : failed)++;
  }
  std::printf("%d passed, %d failed, %d skipped\n", passed, failed, skipped);
  if (failed) return 1;
  if (skipped && !passed) return 77;
  return 0;
}
