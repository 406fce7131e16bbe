// Runs the acceptance criteria; with arguments, only the listed ids.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "mixlab/acceptance.hpp"

int main(int argc, char** argv) {
  using namespace mixlab::acceptance;
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
  if (ids.empty())
    for (int i = 1; i <= static_cast<int>(all_criteria().size()); ++i) ids.push_back(i);
  int failed = 0;
  for (int id : ids) {
    const auto r = run_criterion(id, Level::Fast);
    std::cout << format_line(r) << std::endl;
    failed += r.passed ? 0 : 1;
  }
  std::cout << (ids.size() - failed) << " of " << ids.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
