#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include "cdmp/dataset.hpp"

namespace cdmp {

inline nlohmann::json to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i];
  return v;
}

inline nlohmann::json to_json(const NormStats& n) {
  return {
      {"state_min", to_json(n.state_min)}, {"state_max", to_json(n.state_max)},
      {"return_min", n.return_min},        {"return_max", n.return_max},
      {"horizon", n.horizon},              {"gamma", n.gamma},
  };
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats n;
  n.state_min = vector_from_json(j.at("state_min"));
  n.state_max = vector_from_json(j.at("state_max"));
  n.return_min = j.at("return_min");
  n.return_max = j.at("return_max");
  n.horizon = j.at("horizon");
  n.gamma = j.at("gamma");
  return n;
}

}  // namespace cdmp
