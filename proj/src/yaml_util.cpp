#include "yaml_util.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "dmhe/errors.hpp"

namespace dmhe::yaml {

YAML::Node child(const YAML::Node& node, const std::string& key, const std::string& where) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  YAML::Node c = node[key];
  if (!c) throw ConfigError(where + "." + key + ": missing key");
  return c;
}

double to_double(const YAML::Node& node, const std::string& where) {
  if (!node.IsScalar()) throw ConfigError(where + ": expected a number");
  const std::string s = node.Scalar();
  if (s == "inf" || s == ".inf" || s == "+inf" || s == "+.inf") {
    return std::numeric_limits<double>::infinity();
  }
  if (s == "-inf" || s == "-.inf") return -std::numeric_limits<double>::infinity();
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": '" + s + "' is not a number");
  }
}

int to_int(const YAML::Node& node, const std::string& where) {
  const double v = to_double(node, where);
  if (v != std::floor(v) || std::abs(v) > 2e9) {
    throw ConfigError(where + ": expected an integer");
  }
  return static_cast<int>(v);
}

std::string to_string(const YAML::Node& node, const std::string& where) {
  if (!node.IsScalar()) throw ConfigError(where + ": expected a string");
  return node.Scalar();
}

bool to_bool(const YAML::Node& node, const std::string& where) {
  try {
    return node.as<bool>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + ": expected true or false");
  }
}

Eigen::VectorXd to_vector(const YAML::Node& node, const std::string& where) {
  if (!node.IsSequence()) throw ConfigError(where + ": expected a list");
  Eigen::VectorXd v(node.size());
  for (size_t j = 0; j < node.size(); ++j) {
    v(j) = to_double(node[j], where + "[" + std::to_string(j) + "]");
  }
  return v;
}

Eigen::MatrixXd to_matrix(const YAML::Node& node, const std::string& where) {
  if (!node.IsSequence() || node.size() == 0) {
    throw ConfigError(where + ": expected a non-empty list of rows");
  }
  const size_t rows = node.size();
  size_t cols = 0;
  Eigen::MatrixXd m;
  for (size_t r = 0; r < rows; ++r) {
    const std::string rw = where + "[" + std::to_string(r) + "]";
    const Eigen::VectorXd row = to_vector(node[r], rw);
    if (r == 0) {
      cols = row.size();
      m.resize(rows, cols);
    } else if (static_cast<size_t>(row.size()) != cols) {
      throw ConfigError(rw + ": ragged matrix row");
    }
    m.row(r) = row.transpose();
  }
  return m;
}

Eigen::MatrixXd to_weight(const YAML::Node& node, int dim, const std::string& where) {
  if (node.IsScalar()) {
    return to_double(node, where) * Eigen::MatrixXd::Identity(dim, dim);
  }
  Eigen::MatrixXd m = to_matrix(node, where);
  if (m.rows() != dim || m.cols() != dim) {
    std::ostringstream os;
    os << where << ": expected a scalar or a " << dim << "x" << dim << " matrix";
    throw ConfigError(os.str());
  }
  return m;
}

std::vector<int> to_int_list(const YAML::Node& node, const std::string& where) {
  if (!node.IsSequence()) throw ConfigError(where + ": expected a list");
  std::vector<int> out;
  for (size_t j = 0; j < node.size(); ++j) {
    out.push_back(to_int(node[j], where + "[" + std::to_string(j) + "]"));
  }
  return out;
}

void emit_vector(YAML::Emitter& out, const Eigen::VectorXd& v) {
  out << YAML::Flow << YAML::BeginSeq;
  for (Eigen::Index j = 0; j < v.size(); ++j) out << v(j);
  out << YAML::EndSeq;
}

void emit_matrix(YAML::Emitter& out, const Eigen::MatrixXd& m) {
  out << YAML::Flow << YAML::BeginSeq;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    emit_vector(out, m.row(r).transpose());
  }
  out << YAML::EndSeq;
}

YAML::Node load_file(const std::string& path) {
  try {
    return YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ConfigError(path + ": cannot open file");
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace dmhe::yaml
