#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

namespace linorbits {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Autonomous smooth vector field x' = f(x, p) on R^n with m parameters.
// Angle-like state components are kept unwrapped; the field must be
// periodic in them so trajectories may leave [0, 2pi) freely.
class VectorFieldModel {
 public:
  virtual ~VectorFieldModel() = default;

  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  virtual Vec default_params() const = 0;

  virtual Vec rhs(const Vec& x, const Vec& p) const = 0;

  // State Jacobian df/dx. Default is one-sided finite differences with
  // per-column step h_j = max(1e-7, 1e-7 |x_j|).
  virtual Mat jacobian(const Vec& x, const Vec& p) const;
  virtual bool has_analytic_jacobian() const { return false; }

  int n_params() const { return static_cast<int>(param_names().size()); }
};

// Finite-difference Jacobian used as the default and as the consistency
// oracle for hand-written Jacobians.
Mat fd_jacobian(const VectorFieldModel& m, const Vec& x, const Vec& p);

// Registry of built-in models. Throws errc::input for unknown names.
std::shared_ptr<const VectorFieldModel> make_model(const std::string& name);
std::vector<std::string> model_names();

}  // namespace linorbits
