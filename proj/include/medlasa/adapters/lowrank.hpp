#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "medlasa/model/transformer.hpp"
#include "medlasa/numerics/autodiff.hpp"
#include "medlasa/scaling/scales.hpp"

namespace medlasa {

/// Sorted, duplicate-free set of adapted weights.
class WeightSelection {
 public:
  WeightSelection() = default;
  explicit WeightSelection(std::vector<Weight> weights);

  static WeightSelection all() { return WeightSelection({kAllWeights.begin(), kAllWeights.end()}); }
  /// Comma-separated weight names ("W_q,W_v") or a preset name.
  static WeightSelection parse(std::string_view text);

  bool contains(Weight w) const;
  const std::vector<Weight>& weights() const noexcept { return weights_; }
  std::string label() const;
  friend bool operator==(const WeightSelection&, const WeightSelection&) = default;

 private:
  std::vector<Weight> weights_;
};

/// One selection per row of the editable-weight comparison.
const std::map<std::string, WeightSelection>& weight_presets();

struct AdapterSite {
  std::size_t layer = 0;
  Weight weight = Weight::q;
  Matrix B;  // out x r
  Matrix A;  // r x in
  double alpha = 0.0;
  std::size_t rank = 0;

  double factor() const noexcept { return alpha / static_cast<double>(rank); }
};

/// w0_product + (alpha / r) B (A x).
std::vector<double> site_output(const AdapterSite& site, std::span<const double> w0_product,
                                std::span<const double> x);

class AdaptedModel {
 public:
  AdaptedModel(MicroTransformer base, WeightSelection selection, SiteScales scales, std::vector<AdapterSite> sites);

  const MicroTransformer& base() const noexcept { return base_; }
  const WeightSelection& selection() const noexcept { return selection_; }
  const SiteScales& scales() const noexcept { return scales_; }
  const std::vector<AdapterSite>& sites() const noexcept { return sites_; }
  std::vector<AdapterSite>& sites() noexcept { return sites_; }
  /// Site index for (layer, weight), or -1.
  int find(std::size_t layer, Weight w) const;

  /// Trainable matrices in a fixed order: B then A for every site.
  std::vector<Matrix*> trainable();
  std::size_t parameter_count() const;

  /// Base weights with every (alpha/r) B A folded in. Leaves this model untouched.
  MicroTransformer merge() const;
  MicroTransformer detach() const { return base_; }

 private:
  MicroTransformer base_;
  WeightSelection selection_;
  SiteScales scales_;
  std::vector<AdapterSite> sites_;
};

/// Sites exist where the weight is selected and the layer's rank is >= 1.
/// B starts at zero and A ~ N(0, 0.02^2) from `init_seed`.
AdaptedModel attach(const MicroTransformer& model, const WeightSelection& selection, const SiteScales& scales,
                    std::uint64_t init_seed);

/// Adapter terms for the transformer's linear sites. Without a tape the
/// matrices enter whatever tape the forward pass uses, as constants.
class AdapterDelta final : public WeightDelta {
 public:
  explicit AdapterDelta(const AdaptedModel& adapted);
  /// Binds B and A as trainable leaves on `tape`.
  AdapterDelta(const AdaptedModel& adapted, ad::Tape& tape);

  ad::Var contribution(std::size_t layer, Weight w, ad::Var x) const override;
  /// Bound leaves in AdaptedModel::trainable() order (empty when unbound).
  const std::vector<ad::Var>& leaves() const noexcept { return leaves_; }

 private:
  const AdaptedModel* adapted_;
  std::vector<ad::Var> leaves_;
};

ForwardResult forward(const AdaptedModel& model, std::span<const int> tokens, RunArgs args = {});
double next_token_prob(const AdaptedModel& model, std::span<const int> prompt, std::span<const int> target);
std::vector<int> generate(const AdaptedModel& model, std::span<const int> prompt, std::size_t max_new);

/// Adapter tensors and scales only; the base is stored separately.
void save_adapters(const AdaptedModel& model, const std::filesystem::path& path);
AdaptedModel load_adapters(const MicroTransformer& base, const std::filesystem::path& path);

}  // namespace medlasa
