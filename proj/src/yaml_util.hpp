#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <yaml-cpp/yaml.h>

namespace dmhe::yaml {

// Required child; throws ConfigError naming `where`.
YAML::Node child(const YAML::Node& node, const std::string& key,
                 const std::string& where);
double to_double(const YAML::Node& node, const std::string& where);
int to_int(const YAML::Node& node, const std::string& where);
std::string to_string(const YAML::Node& node, const std::string& where);
bool to_bool(const YAML::Node& node, const std::string& where);
Eigen::VectorXd to_vector(const YAML::Node& node, const std::string& where);
// Row-major list of rows.
Eigen::MatrixXd to_matrix(const YAML::Node& node, const std::string& where);
// A scalar (times identity of size dim) or a dim×dim matrix.
Eigen::MatrixXd to_weight(const YAML::Node& node, int dim,
                          const std::string& where);
std::vector<int> to_int_list(const YAML::Node& node, const std::string& where);

void emit_vector(YAML::Emitter& out, const Eigen::VectorXd& v);
void emit_matrix(YAML::Emitter& out, const Eigen::MatrixXd& m);

YAML::Node load_file(const std::string& path);

}  // namespace dmhe::yaml
