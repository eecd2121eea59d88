// Solver-agnostic conic program IR.
//
// Programs are stored in the standard form
//     minimize    c'x
//     subject to  A x + s = b,   s in K,
// with K a product of zero, nonnegative, PSD and exponential cones, kept in
// declaration order. Symmetric matrix slabs use the scaled lower-triangular
// vectorization (column-major, off-diagonals multiplied by sqrt(2)), which
// makes the Frobenius inner product coincide with the dot product of the
// stacked vectors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sinkdrc/core.hpp"

namespace sinkdrc::conic {

inline int svec_size(int order) { return order * (order + 1) / 2; }

// Index of entry (i, j), i >= j, in the scaled lower-triangular stack.
inline int svec_index(int order, int i, int j) {
  if (j > i) std::swap(i, j);
  return j * order - j * (j - 1) / 2 + (i - j);
}

struct LinTerm {
  int var;
  double coeff;
};

// Affine scalar expression: sum of coeff * x[var] plus a constant.
class LinExpr {
 public:
  LinExpr() = default;
  LinExpr(double constant) : constant_(constant) {}  // NOLINT: implicit by design
  static LinExpr variable(int index, double coeff = 1.0) {
    LinExpr e;
    if (coeff != 0.0) e.terms_.push_back({index, coeff});
    return e;
  }

  LinExpr& operator+=(const LinExpr& o) {
    terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
    constant_ += o.constant_;
    return *this;
  }
  LinExpr& operator-=(const LinExpr& o) { return *this += o * -1.0; }
  LinExpr& operator*=(double a) {
    for (auto& t : terms_) t.coeff *= a;
    constant_ *= a;
    return *this;
  }
  friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
  friend LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
  friend LinExpr operator*(LinExpr a, double s) { return a *= s; }
  friend LinExpr operator*(double s, LinExpr a) { return a *= s; }
  friend LinExpr operator-(LinExpr a) { return a *= -1.0; }

  // Merges duplicate variable entries and drops zero coefficients.
  void compress() {
    std::sort(terms_.begin(), terms_.end(),
              [](const LinTerm& a, const LinTerm& b) { return a.var < b.var; });
    std::vector<LinTerm> out;
    for (const auto& t : terms_) {
      if (!out.empty() && out.back().var == t.var)
        out.back().coeff += t.coeff;
      else
        out.push_back(t);
    }
    out.erase(std::remove_if(out.begin(), out.end(),
                             [](const LinTerm& t) { return t.coeff == 0.0; }),
              out.end());
    terms_ = std::move(out);
  }

  double constant() const { return constant_; }
  const std::vector<LinTerm>& terms() const { return terms_; }
  bool is_constant() const {
    return std::all_of(terms_.begin(), terms_.end(),
                       [](const LinTerm& t) { return t.coeff == 0.0; });
  }

  double eval(const Vector& x) const {
    double v = constant_;
    for (const auto& t : terms_) v += t.coeff * x[t.var];
    return v;
  }

 private:
  std::vector<LinTerm> terms_;
  double constant_ = 0.0;
};

// Dense matrix of affine expressions.
class ExprMatrix {
 public:
  ExprMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  static ExprMatrix constant(const Matrix& m) {
    ExprMatrix e(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) e.at(i, j) = LinExpr(m(i, j));
    return e;
  }
  LinExpr& at(int i, int j) { return data_[i * cols_ + j]; }
  const LinExpr& at(int i, int j) const { return data_[i * cols_ + j]; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }

  Matrix eval(const Vector& x) const {
    Matrix m(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) m(i, j) = at(i, j).eval(x);
    return m;
  }

 private:
  int rows_, cols_;
  std::vector<LinExpr> data_;
};

enum class ConeKind { Zero, NonNeg, PsdTriangle, Exp };

inline const char* cone_name(ConeKind k) {
  switch (k) {
    case ConeKind::Zero: return "zero";
    case ConeKind::NonNeg: return "nonneg";
    case ConeKind::PsdTriangle: return "psd";
    case ConeKind::Exp: return "exp";
  }
  return "?";
}

struct ConeBlock {
  ConeKind kind;
  int order;      // matrix order for PSD blocks, otherwise row count
  int rows;       // rows occupied in A
  int first_row;  // offset into A/b
  std::string label;
};

struct VarBlock {
  std::string name;
  int offset;
  int count;
};

// Handle to a symmetric matrix variable stored in scaled svec order.
class SymVar {
 public:
  SymVar() = default;
  SymVar(int offset, int order) : offset_(offset), order_(order) {}
  int order() const { return order_; }
  int offset() const { return offset_; }
  // Affine expression for entry (i, j) of the matrix.
  LinExpr entry(int i, int j) const {
    const double c = (i == j) ? 1.0 : 1.0 / std::sqrt(2.0);
    return LinExpr::variable(offset_ + svec_index(order_, i, j), c);
  }
  ExprMatrix expr() const {
    ExprMatrix m(order_, order_);
    for (int i = 0; i < order_; ++i)
      for (int j = 0; j < order_; ++j) m.at(i, j) = entry(i, j);
    return m;
  }
  // Reconstructs the symmetric matrix from a solution vector.
  Matrix value(const Vector& x) const {
    Matrix m(order_, order_);
    for (int i = 0; i < order_; ++i)
      for (int j = 0; j <= i; ++j) m(i, j) = m(j, i) = entry(i, j).eval(x);
    return m;
  }

 private:
  int offset_ = 0;
  int order_ = 0;
};

struct Triplet {
  int row;
  int col;
  double value;
};

struct Diagnostics {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool clean() const { return errors.empty() && warnings.empty(); }
};

class ConicProgram {
 public:
  // ---- variables ----
  int add_scalar(const std::string& name) {
    vars_.push_back({name, num_vars_, 1});
    return num_vars_++;
  }
  std::vector<int> add_scalars(const std::string& name, int count) {
    vars_.push_back({name, num_vars_, count});
    std::vector<int> idx(count);
    for (int i = 0; i < count; ++i) idx[i] = num_vars_ + i;
    num_vars_ += count;
    return idx;
  }
  SymVar add_symmetric(const std::string& name, int order) {
    const int n = svec_size(order);
    vars_.push_back({name, num_vars_, n});
    SymVar v(num_vars_, order);
    num_vars_ += n;
    return v;
  }

  // ---- constraints (each row is s_r = expr_r, s in cone) ----
  void add_zero(const LinExpr& e, const std::string& label) {
    append_block(ConeKind::Zero, {e}, 0, label);
  }
  void add_zero_rows(std::vector<LinExpr> rows, const std::string& label) {
    append_block(ConeKind::Zero, std::move(rows), 0, label);
  }
  void add_nonneg(const LinExpr& e, const std::string& label) {
    append_block(ConeKind::NonNeg, {e}, 0, label);
  }
  void add_exp(const LinExpr& x, const LinExpr& y, const LinExpr& z,
               const std::string& label) {
    append_block(ConeKind::Exp, {x, y, z}, 0, label);
  }
  // S must be symmetric; asymmetric input is recorded as a diagnostic and the
  // lower triangle is used.
  void add_psd(const ExprMatrix& S, const std::string& label) {
    const int k = S.rows();
    if (S.cols() != k) {
      diagnostics_.errors.push_back("psd block '" + label + "' is not square");
      return;
    }
    check_symmetry(S, label);
    std::vector<LinExpr> rows;
    rows.reserve(svec_size(k));
    const double rt2 = std::sqrt(2.0);
    for (int j = 0; j < k; ++j)
      for (int i = j; i < k; ++i)
        rows.push_back(i == j ? S.at(i, j) : S.at(i, j) * rt2);
    append_block(ConeKind::PsdTriangle, std::move(rows), k, label);
  }

  // Hypograph of scale * log det(M / scale) for an affine symmetric M and an
  // affine nonnegative scale. With scale == 1 this is t <= log det M. Uses the
  // standard factor-matrix encoding: a lower-triangular slab W with
  //   [ M   W        ]
  //   [ W'  diag(W) ] >= 0,   v_i <= scale*log(W_ii/scale),   t = sum_i v_i.
  LinExpr add_logdet_hypograph(const ExprMatrix& M, const LinExpr& scale,
                               const std::string& label) {
    const int k = M.rows();
    auto w = add_scalars(label + ".W", svec_size(k));
    auto v = add_scalars(label + ".v", k);
    auto wvar = [&](int i, int j) {  // W entry (i>=j), unscaled
      return LinExpr::variable(w[svec_index(k, i, j)]);
    };
    ExprMatrix block(2 * k, 2 * k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        block.at(i, j) = M.at(i, j);
        const LinExpr wij = (i >= j) ? wvar(i, j) : LinExpr(0.0);
        block.at(i, k + j) = wij;
        block.at(k + j, i) = wij;
        block.at(k + i, k + j) = (i == j) ? wvar(i, i) : LinExpr(0.0);
      }
    add_psd(block, label + ".factor");
    LinExpr t;
    for (int i = 0; i < k; ++i) {
      add_exp(LinExpr::variable(v[i]), scale, wvar(i, i), label + ".log");
      t += LinExpr::variable(v[i]);
    }
    return t;
  }

  void set_objective(LinExpr e) {
    e.compress();
    objective_ = std::move(e);
  }

  // ---- introspection ----
  int num_vars() const { return num_vars_; }
  int num_rows() const { return num_rows_; }
  const std::vector<VarBlock>& vars() const { return vars_; }
  const std::vector<ConeBlock>& cones() const { return cones_; }
  const std::vector<Triplet>& triplets() const { return a_; }
  const std::vector<double>& rhs() const { return b_; }
  const LinExpr& objective() const { return objective_; }

  double eval_objective(const Vector& x) const { return objective_.eval(x); }

  Diagnostics validate() const {
    Diagnostics d = diagnostics_;
    std::vector<bool> used(num_vars_, false);
    for (const auto& t : a_) {
      if (t.col < 0 || t.col >= num_vars_)
        d.errors.push_back("triplet references unknown variable");
      else
        used[t.col] = true;
      if (t.row < 0 || t.row >= num_rows_)
        d.errors.push_back("triplet references unknown row");
    }
    for (const auto& t : objective_.terms())
      if (t.var >= 0 && t.var < num_vars_) used[t.var] = true;
    for (const auto& vb : vars_) {
      int unused = 0;
      for (int i = 0; i < vb.count; ++i)
        if (!used[vb.offset + i]) ++unused;
      if (unused > 0)
        d.warnings.push_back("variable block '" + vb.name + "' has " +
                             std::to_string(unused) + " unreferenced entries");
    }
    if (objective_.is_constant() && objective_.constant() == 0.0)
      d.warnings.push_back("objective is empty");
    int rows = 0;
    for (const auto& c : cones_) rows += c.rows;
    if (rows != num_rows_) d.errors.push_back("cone rows do not cover A");
    return d;
  }

  // Largest violation of every constraint at x (PSD via min eigenvalue,
  // exponential cone via the defining inequality).
  double max_violation(const Vector& x) const {
    Vector s = slack(x);
    double worst = 0.0;
    for (const auto& c : cones_) {
      const auto seg = s.segment(c.first_row, c.rows);
      switch (c.kind) {
        case ConeKind::Zero:
          worst = std::max(worst, seg.cwiseAbs().maxCoeff());
          break;
        case ConeKind::NonNeg:
          worst = std::max(worst, std::max(0.0, -seg.minCoeff()));
          break;
        case ConeKind::PsdTriangle: {
          Matrix m = unstack_svec(seg, c.order);
          Eigen::SelfAdjointEigenSolver<Matrix> es(m);
          worst = std::max(worst, std::max(0.0, -es.eigenvalues().minCoeff()));
          break;
        }
        case ConeKind::Exp: {
          // (x,y,z): y>0 and y*exp(x/y) <= z (limit y->0: x<=0, z>=0)
          const double ex = seg[0], ey = seg[1], ez = seg[2];
          double viol;
          if (ey > 1e-300)
            viol = ey * std::exp(ex / ey) - ez;
          else
            viol = std::max({ex, -ez, -ey});
          worst = std::max(worst, std::max(0.0, viol));
          break;
        }
      }
    }
    return worst;
  }

  // s = b - A x
  Vector slack(const Vector& x) const {
    Vector s = Eigen::Map<const Vector>(b_.data(), b_.size());
    for (const auto& t : a_) s[t.row] -= t.value * x[t.col];
    return s;
  }

  static Matrix unstack_svec(const Eigen::Ref<const Vector>& v, int order) {
    Matrix m(order, order);
    const double inv_rt2 = 1.0 / std::sqrt(2.0);
    int r = 0;
    for (int j = 0; j < order; ++j)
      for (int i = j; i < order; ++i, ++r) {
        const double val = (i == j) ? v[r] : v[r] * inv_rt2;
        m(i, j) = m(j, i) = val;
      }
    return m;
  }

  static Vector stack_svec(const Matrix& m) {
    const int k = static_cast<int>(m.rows());
    Vector v(svec_size(k));
    const double rt2 = std::sqrt(2.0);
    int r = 0;
    for (int j = 0; j < k; ++j)
      for (int i = j; i < k; ++i, ++r) v[r] = (i == j) ? m(i, j) : m(i, j) * rt2;
    return v;
  }

  // Debug dump of the full IR (variables, cones, objective, sparse triplets).
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["num_vars"] = num_vars_;
    j["num_rows"] = num_rows_;
    for (const auto& v : vars_)
      j["variables"].push_back({{"name", v.name}, {"offset", v.offset}, {"count", v.count}});
    for (const auto& c : cones_)
      j["cones"].push_back({{"kind", cone_name(c.kind)},
                            {"order", c.order},
                            {"rows", c.rows},
                            {"first_row", c.first_row},
                            {"label", c.label}});
    nlohmann::json obj;
    for (const auto& t : objective_.terms())
      obj["terms"].push_back({{"var", t.var}, {"coeff", t.coeff}});
    obj["constant"] = objective_.constant();
    j["objective"] = obj;
    nlohmann::json rows = nlohmann::json::array(), cols = nlohmann::json::array(),
                   vals = nlohmann::json::array();
    for (const auto& t : a_) {
      rows.push_back(t.row);
      cols.push_back(t.col);
      vals.push_back(t.value);
    }
    j["A"] = {{"rows", rows}, {"cols", cols}, {"values", vals}};
    j["b"] = b_;
    return j;
  }

 private:
  void append_block(ConeKind kind, std::vector<LinExpr> rows, int order,
                    const std::string& label) {
    ConeBlock blk{kind, kind == ConeKind::PsdTriangle ? order
                                                      : static_cast<int>(rows.size()),
                  static_cast<int>(rows.size()), num_rows_, label};
    for (auto& e : rows) {
      e.compress();
      for (const auto& t : e.terms()) a_.push_back({num_rows_, t.var, -t.coeff});
      b_.push_back(e.constant());
      ++num_rows_;
    }
    cones_.push_back(std::move(blk));
  }

  void check_symmetry(const ExprMatrix& S, const std::string& label) {
    for (int i = 0; i < S.rows(); ++i)
      for (int j = 0; j < i; ++j) {
        LinExpr diff = S.at(i, j) - S.at(j, i);
        diff.compress();
        const bool sym = diff.terms().empty() && diff.constant() == 0.0;
        if (!sym) {
          diagnostics_.errors.push_back("psd block '" + label +
                                        "' is not symmetric at entry (" +
                                        std::to_string(i) + "," + std::to_string(j) + ")");
          return;
        }
      }
  }

  int num_vars_ = 0;
  int num_rows_ = 0;
  std::vector<VarBlock> vars_;
  std::vector<ConeBlock> cones_;
  std::vector<Triplet> a_;
  std::vector<double> b_;
  LinExpr objective_;
  Diagnostics diagnostics_;
};

}  // namespace sinkdrc::conic
