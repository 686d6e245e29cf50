#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace linorbits {

// Failure classes thrown by the solvers. CLI exit codes: input errors map
// to 1, everything else here to 2. Hypothesis violations are not errors;
// they are reported as flags (see coupling.hpp) and map to exit 3 only in
// the `hypotheses` subcommand.
enum class errc {
  input,                  // bad argument, unknown key, malformed config
  integration_failure,    // step size underflow or too many steps
  no_crossing,            // event not bracketed within the time horizon
  convergence,            // Newton / fixed point did not reach tolerance
  escape,                 // trajectory left the validity tube
  degeneracy,             // multiplier collision, non-simple spectrum
  ill_conditioned_frame,  // principal angle in the ambiguous band
  insufficient_data,      // fit or detector given too few points
  domain,                 // query outside interpolant or parameter range
};

const char* errc_name(errc c);

class solver_error : public std::runtime_error {
 public:
  solver_error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  errc code() const { return code_; }

  // Optional diagnostics, filled by the throw site when available.
  std::vector<double> last_state;        // integration_failure: last accepted state
  double last_time = 0.0;                // integration_failure: time of that state
  std::vector<double> residual_history;  // convergence: Newton residual norms
  std::vector<double> angle_spectrum;    // ill_conditioned_frame: principal angles

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw solver_error(code, what); }

}  // namespace linorbits
