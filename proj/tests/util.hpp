#pragma once

#include <initializer_list>

#include "safely/common.hpp"

inline safely::Vec vec(std::initializer_list<double> v) {
  safely::Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}
