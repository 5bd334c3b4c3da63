#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

namespace aetlab {

enum class Norm { L2, Linf };

inline double norm_of(std::span<const double> v, Norm p) {
    double s = 0.0;
    if (p == Norm::Linf) {
        for (double x : v) s = std::max(s, std::abs(x));
        return s;
    }
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double distance(std::span<const double> a, std::span<const double> b, Norm p) {
    double s = 0.0;
    if (p == Norm::Linf) {
        for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
        return s;
    }
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline const char* to_string(Norm p) { return p == Norm::L2 ? "l2" : "linf"; }

}  // namespace aetlab
