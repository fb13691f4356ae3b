#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "rce/detector.hpp"
#include "rce/network.hpp"
#include "rce/tensor.hpp"

namespace rce::attack {

enum class Family { Fgsm, Bim, Ilcm, Jsma, Cw, CwHc, CwWb, Rand };

std::string_view to_string(Family family);
Family parse_family(std::string_view text);
/// Families whose output stays inside an L-infinity ball of radius epsilon.
bool epsilon_bounded(Family family);
/// Families that need a target class.
bool targeted(Family family);

struct AttackConfig {
  Family family = Family::Fgsm;
  /// L-infinity budget in [-0.5, 0.5] pixel units (FGSM, BIM, ILCM, RAND).
  double epsilon = 0.1;
  /// BIM / ILCM iteration count r.
  std::size_t iterations = 10;
  /// C&W confidence margin.
  double kappa = 0.0;
  /// C&W Adam learning rate.
  double step_size = 0.01;
  /// C&W binary-search rounds over c.
  std::size_t rounds = 9;
  double initial_c = 0.01;
  /// c values at or above this bound count as "no upper bracket yet".
  double c_upper = 1e10;
  std::size_t max_iterations = 10000;
  /// Stop a round when the loss has not improved by 0.01% over a tenth of
  /// the iteration budget.
  bool abort_early = true;
  /// C&W-wb hinge offset: f2 = max(-log KD - eta, 0).
  double eta = 0.0;
  double jsma_offset = 1.0;
  std::size_t jsma_max_pixels = 100;
  std::uint64_t seed = 0;

  /// Family defaults: C&W-hc sets kappa = 10, RAND sets epsilon = 0.04.
  static AttackConfig defaults(Family family);
  void validate() const;
};

struct AttackResult {
  Tensor adversarial;  ///< [C x H x W]
  bool success = false;
  std::size_t iterations = 0;
  /// Final attack objective (loss for gradient-sign families, C&W total loss).
  double objective = 0.0;
  /// C&W-wb hinge value at the returned point, NaN for other families.
  double f2 = std::numeric_limits<double>::quiet_NaN();
  /// Label predicted at the returned point.
  std::size_t label = 0;
  /// Attack target: y_ll for ILCM, t for JSMA and C&W, the true label otherwise.
  std::size_t target = 0;
  /// Smallest c of a successful C&W round, NaN otherwise.
  double c = std::numeric_limits<double>::quiet_NaN();
};

/// x + eps * sgn(grad_x L(x, y)) clipped to the pixel domain. L is the
/// model's own training loss. Inputs are [N x C x H x W].
std::vector<AttackResult> fgsm(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> labels,
                               double epsilon);
/// r steps of size eps / r, each clipped to the eps-ball around x and the domain.
std::vector<AttackResult> bim(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> labels,
                              double epsilon, std::size_t r);
/// BIM descending the loss toward y_ll = argmin F(x), fixed at the clean input.
std::vector<AttackResult> ilcm(const nn::NetworkModel& model, const Tensor& x, double epsilon, std::size_t r);

/// Single-pixel saliency for one feature: 0 when d_t < 0 or d_other > 0,
/// else d_t * |d_other|.
double jsma_saliency(double d_target, double d_other);
/// Increases the most salient unsaturated pixel by `offset` per iteration
/// until the target is predicted or `max_pixels` pixels were changed.
/// Derivatives are taken on the prediction-rule logits.
std::vector<AttackResult> jsma(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> targets,
                               double offset, std::size_t max_pixels);

/// max(max_{i != t} z_i - z_t, -kappa).
double cw_objective(std::span<const double> logits, std::size_t target, double kappa);
/// Pixel value of the tanh parameterization, 0.5 * tanh(w).
inline double cw_pixel(double w) { return 0.5 * std::tanh(w); }

/// Targeted C&W L2 attack with a binary search over c. Returns the
/// successful iterate of least distortion. When `detector` is given, the
/// white-box term c * f2 against the target-class K-density is added and the
/// final f2 is reported.
std::vector<AttackResult> cw(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> targets,
                             const AttackConfig& config, const detect::DetectorState* detector = nullptr);

std::vector<AttackResult> rand_noise(const Tensor& x, double epsilon, std::uint64_t seed);

/// Seeded target classes, each different from its label.
std::vector<std::size_t> random_targets(std::span<const std::size_t> labels, std::size_t classes, std::uint64_t seed);

/// Dispatches on config.family. `targets` is used by JSMA and the C&W family
/// (drawn from config.seed when empty); `detector` is required by C&W-wb.
std::vector<AttackResult> run(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> labels,
                              const AttackConfig& config, std::span<const std::size_t> targets = {},
                              const detect::DetectorState* detector = nullptr);

/// Stacks the adversarial images of a result set into [N x C x H x W].
Tensor stack_adversarial(std::span<const AttackResult> results);

}  // namespace rce::attack
