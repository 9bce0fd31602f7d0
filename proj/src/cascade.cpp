#include "fragtrack/cascade.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace fragtrack {
namespace {

double median_of(std::vector<double>& values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

Eigen::VectorXd p1_from_frequencies(const Eigen::VectorXi& frequencies) {
  const int max = frequencies.maxCoeff();
  Eigen::VectorXd p(frequencies.size());
  for (int i = 0; i < frequencies.size(); ++i)
    p(i) = std::exp2(static_cast<double>(frequencies(i) - max));
  return p / p.sum();
}

std::pair<int, int> top_two(const Eigen::VectorXd& values) {
  if (values.size() == 1) return {0, 0};
  int a = 0;
  for (int i = 1; i < values.size(); ++i)
    if (values(i) > values(a)) a = i;
  int b = a == 0 ? 1 : 0;
  for (int i = 0; i < values.size(); ++i) {
    if (i == a) continue;
    if (values(i) > values(b)) b = i;
  }
  return {a, b};
}

double certainty_score(const Eigen::VectorXd& p1,
                       const Eigen::VectorXi& image_argmax,
                       const Eigen::VectorXf& image_score) {
  const auto [a, b] = top_two(p1);
  std::vector<double> scores_a, scores_b;
  for (int i = 0; i < image_argmax.size(); ++i) {
    if (image_argmax(i) == a) scores_a.push_back(image_score(i));
    if (image_argmax(i) == b) scores_b.push_back(image_score(i));
  }
  const double med_a = median_of(scores_a);
  const double med_b = median_of(scores_b);
  return (med_a * p1(a) - med_b * p1(b)) / (p1(a) + p1(b));
}

IdentityDistribution identify_fragment(
    const ClassifierModel& model,
    const Eigen::Ref<const Eigen::MatrixXf>& images) {
  const Eigen::MatrixXd probs = model.predict(images);
  IdentityDistribution dist;
  const int n = model.n_classes();
  dist.frequencies = Eigen::VectorXi::Zero(n);
  dist.image_argmax.resize(probs.rows());
  dist.image_score.resize(probs.rows());
  for (int i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg;
    probs.row(i).maxCoeff(&arg);
    dist.image_argmax(i) = static_cast<int>(arg);
    dist.image_score(i) = static_cast<float>(probs(i, arg));
    ++dist.frequencies(static_cast<int>(arg));
  }
  dist.p1 = p1_from_frequencies(dist.frequencies);
  dist.certainty = certainty_score(dist.p1, dist.image_argmax, dist.image_score);
  return dist;
}

std::vector<std::vector<int>> build_coexistence(
    const std::vector<Fragment>& fragments) {
  std::vector<int> by_start(fragments.size());
  std::iota(by_start.begin(), by_start.end(), 0);
  std::sort(by_start.begin(), by_start.end(), [&fragments](int a, int b) {
    return fragments[static_cast<std::size_t>(a)].start_frame <
           fragments[static_cast<std::size_t>(b)].start_frame;
  });
  std::vector<std::vector<int>> coexisting(fragments.size());
  for (std::size_t i = 0; i < by_start.size(); ++i) {
    const Fragment& a = fragments[static_cast<std::size_t>(by_start[i])];
    for (std::size_t j = i + 1; j < by_start.size(); ++j) {
      const Fragment& b = fragments[static_cast<std::size_t>(by_start[j])];
      if (b.start_frame > a.end_frame) break;
      coexisting[static_cast<std::size_t>(a.id)].push_back(b.id);
      coexisting[static_cast<std::size_t>(b.id)].push_back(a.id);
    }
  }
  for (auto& list : coexisting) std::sort(list.begin(), list.end());
  return coexisting;
}

std::vector<int> sort_globals_by_distance(const CascadeInput& input) {
  const std::vector<Fragment>& fragments = *input.fragments;
  std::vector<double> score(input.globals.size());
  for (std::size_t g = 0; g < input.globals.size(); ++g) {
    double min_distance = std::numeric_limits<double>::infinity();
    for (const int f : input.globals[g].members)
      min_distance = std::min(
          min_distance, distance_travelled(fragments[static_cast<std::size_t>(f)]));
    score[g] = min_distance;
  }
  std::vector<int> order(input.globals.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (score[static_cast<std::size_t>(a)] != score[static_cast<std::size_t>(b)])
      return score[static_cast<std::size_t>(a)] >
             score[static_cast<std::size_t>(b)];
    if (input.globals[static_cast<std::size_t>(a)].core_frame !=
        input.globals[static_cast<std::size_t>(b)].core_frame)
      return input.globals[static_cast<std::size_t>(a)].core_frame <
             input.globals[static_cast<std::size_t>(b)].core_frame;
    return a < b;
  });
  return order;
}

int choose_first_global_fragment(const CascadeInput& input) {
  if (input.globals.empty())
    throw NoGlobalFragment("no global fragment: tracking cannot proceed");
  return sort_globals_by_distance(input)[0];
}

GlobalAssessment assess_global_fragment(
    const CascadeInput& input, const GlobalFragment& global,
    const std::vector<FragmentIdentity>& states,
    const std::vector<int>& committed_identity, double certainty_threshold) {
  GlobalAssessment result;
  auto identity_of = [&](int frag) -> int {
    const FragmentIdentity& st = states[static_cast<std::size_t>(frag)];
    if (st.is_fixed()) return st.identity;
    return committed_identity[static_cast<std::size_t>(frag)];
  };

  // 1. certainty, over the members still in play
  for (const int f : global.members) {
    if (identity_of(f) >= 0) continue;
    const FragmentIdentity& st = states[static_cast<std::size_t>(f)];
    if (st.dist.p1.size() == 0 || st.dist.certainty < certainty_threshold) {
      result.reason = GlobalAssessment::Reason::not_certain;
      return result;
    }
  }

  // 2. temporary identification, most confident members first
  std::vector<int> open;
  std::vector<std::pair<int, int>> assigned;  // (fragment, identity)
  for (const int f : global.members) {
    if (identity_of(f) >= 0)
      assigned.emplace_back(f, identity_of(f));
    else
      open.push_back(f);
  }
  std::sort(open.begin(), open.end(), [&states](int a, int b) {
    const double pa = states[static_cast<std::size_t>(a)].dist.p1.maxCoeff();
    const double pb = states[static_cast<std::size_t>(b)].dist.p1.maxCoeff();
    if (pa != pb) return pa > pb;
    return a < b;
  });
  std::vector<std::pair<int, int>> local;  // newly assigned this assessment
  auto held_by_coexisting = [&](int frag, int identity) {
    for (const int c : input.coexisting[static_cast<std::size_t>(frag)]) {
      if (identity_of(c) == identity) return true;
      for (const auto& [lf, li] : local)
        if (lf == c && li == identity) return true;
    }
    return false;
  };
  for (const int f : open) {
    const FragmentIdentity& st = states[static_cast<std::size_t>(f)];
    Eigen::Index arg;
    const double max_p1 = st.dist.p1.maxCoeff(&arg);
    const int identity = static_cast<int>(arg);
    const double images = static_cast<double>(input.fragment_images(f));
    if (max_p1 <= 1.0 / images || held_by_coexisting(f, identity)) {
      result.reason = GlobalAssessment::Reason::non_consistent;
      return result;
    }
    local.emplace_back(f, identity);
  }

  // 3. uniqueness within the global fragment
  std::set<int> seen;
  for (const auto& [f, id] : assigned) {
    if (!seen.insert(id).second) {
      result.reason = GlobalAssessment::Reason::not_unique;
      return result;
    }
  }
  for (const auto& [f, id] : local) {
    if (!seen.insert(id).second) {
      result.reason = GlobalAssessment::Reason::not_unique;
      return result;
    }
  }

  result.acceptable = true;
  result.temporary_ids = std::move(local);
  return result;
}

namespace {

// Driver holding the mutable accumulation state shared by the protocols.
class CascadeDriver {
 public:
  CascadeDriver(const CascadeInput& input, const CascadeParams& params)
      : input_(input), params_(params) {
    const int nf = input.fragment_count();
    states_.resize(static_cast<std::size_t>(nf));
    committed_.assign(static_cast<std::size_t>(nf), -1);
    in_global_.assign(static_cast<std::size_t>(nf), false);
    global_done_.assign(input.globals.size(), false);
    for (const GlobalFragment& g : input.globals)
      for (const int f : g.members)
        in_global_[static_cast<std::size_t>(f)] = true;
    total_global_images_ = 0;
    for (int f = 0; f < nf; ++f)
      if (in_global_[static_cast<std::size_t>(f)])
        total_global_images_ += input.fragment_images(f);
  }

  ProtocolOutcome run() {
    if (input_.globals.empty())
      throw NoGlobalFragment("no global fragment: tracking cannot proceed");
    sigma_ = sort_globals_by_distance(input_);
    ProtocolOutcome outcome;
    outcome.total_global_images = total_global_images_;

    if (protocol1(outcome)) {
      outcome.status = ProtocolStatus::protocol1_done;
      finish(outcome);
      return outcome;
    }
    if (protocol2(outcome)) {
      outcome.status = ProtocolStatus::protocol2_done;
      finish(outcome);
      return outcome;
    }
    protocol3(outcome);
    finish(outcome);
    return outcome;
  }

 private:
  // --- bookkeeping ------------------------------------------------------

  void reset_identities() {
    std::fill(states_.begin(), states_.end(), FragmentIdentity{});
    std::fill(committed_.begin(), committed_.end(), -1);
    std::fill(global_done_.begin(), global_done_.end(), false);
    images_accumulated_ = 0;
  }

  void fix_fragment(int frag, int identity, int iteration) {
    FragmentIdentity& st = states_[static_cast<std::size_t>(frag)];
    if (st.is_fixed()) return;
    st.state = IdentityState::fixed;
    st.identity = identity;
    st.accumulated_iteration = iteration;
    // Fixed fragments expose a one-hot P1 so coexistence exclusion is exact.
    st.dist.p1 = Eigen::VectorXd::Zero(input_.n_animals);
    st.dist.p1(identity) = 1.0;
    if (st.dist.frequencies.size() == 0)
      st.dist.frequencies = Eigen::VectorXi::Zero(input_.n_animals);
    images_accumulated_ += input_.fragment_images(frag);
  }

  double coverage() const {
    return total_global_images_ == 0
               ? 0.0
               : static_cast<double>(images_accumulated_) /
                     static_cast<double>(total_global_images_);
  }

  void mark_done_globals() {
    for (std::size_t g = 0; g < input_.globals.size(); ++g) {
      if (global_done_[g]) continue;
      bool all_fixed = true;
      for (const int f : input_.globals[g].members)
        if (!states_[static_cast<std::size_t>(f)].is_fixed()) {
          all_fixed = false;
          break;
        }
      if (all_fixed) global_done_[g] = true;
    }
  }

  // Assessment order: nearest core first relative to the seed global.
  std::vector<int> assessment_order(int seed_global) const {
    const int seed_core =
        input_.globals[static_cast<std::size_t>(seed_global)].core_frame;
    std::vector<int> order;
    for (std::size_t g = 0; g < input_.globals.size(); ++g)
      if (static_cast<int>(g) != seed_global) order.push_back(static_cast<int>(g));
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const int da =
          std::abs(input_.globals[static_cast<std::size_t>(a)].core_frame - seed_core);
      const int db =
          std::abs(input_.globals[static_cast<std::size_t>(b)].core_frame - seed_core);
      if (da != db) return da < db;
      if (input_.globals[static_cast<std::size_t>(a)].core_frame !=
          input_.globals[static_cast<std::size_t>(b)].core_frame)
        return input_.globals[static_cast<std::size_t>(a)].core_frame <
               input_.globals[static_cast<std::size_t>(b)].core_frame;
      return a < b;
    });
    return order;
  }

  // Seeded unique labels by fragment-id order.
  std::vector<std::pair<int, int>> random_unique_labels(
      const GlobalFragment& global, std::uint64_t seed) const {
    std::vector<int> members = global.members;
    std::sort(members.begin(), members.end());
    Rng rng(derive_seed(seed, 0x1abe1));
    const std::vector<int> labels = rng.permutation(input_.n_animals);
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < members.size(); ++i)
      out.emplace_back(members[i], labels[i]);
    return out;
  }

  // --- dataset assembly -------------------------------------------------

  // Union of accumulated fragments' images, capped per identity at
  // max_images_per_identity with the 1800/1200 old/new quotas, re-drawn per
  // iteration.
  LabeledDataset build_accumulated_dataset(int current_iteration) {
    std::vector<std::vector<int>> old_rows(
        static_cast<std::size_t>(input_.n_animals));
    std::vector<std::vector<int>> new_rows(
        static_cast<std::size_t>(input_.n_animals));
    for (int f = 0; f < input_.fragment_count(); ++f) {
      const FragmentIdentity& st = states_[static_cast<std::size_t>(f)];
      if (!st.is_fixed()) continue;
      auto& bucket = st.accumulated_iteration < current_iteration
                         ? old_rows[static_cast<std::size_t>(st.identity)]
                         : new_rows[static_cast<std::size_t>(st.identity)];
      const auto [begin, end] = input_.fragment_rows[static_cast<std::size_t>(f)];
      for (int r = begin; r < end; ++r) bucket.push_back(r);
    }

    Rng rng(derive_seed(params_.seed,
                        0xda7a0 + static_cast<std::uint64_t>(current_iteration)));
    std::vector<int> rows;
    std::vector<int> labels;
    const int cap = params_.max_images_per_identity;
    for (int id = 0; id < input_.n_animals; ++id) {
      auto& old_b = old_rows[static_cast<std::size_t>(id)];
      auto& new_b = new_rows[static_cast<std::size_t>(id)];
      const int n_old = static_cast<int>(old_b.size());
      const int n_new = static_cast<int>(new_b.size());
      int old_take = n_old, new_take = n_new;
      if (n_old + n_new > cap) {
        old_take = std::min(n_old, std::max(params_.old_image_quota, cap - n_new));
        new_take = std::min(n_new, cap - old_take);
      }
      auto draw = [&rng, &rows](std::vector<int>& bucket, int take) {
        if (take >= static_cast<int>(bucket.size())) {
          rows.insert(rows.end(), bucket.begin(), bucket.end());
          return static_cast<int>(bucket.size());
        }
        const std::vector<int> pick = rng.sample_without_replacement(
            static_cast<int>(bucket.size()), take);
        for (const int p : pick) rows.push_back(bucket[static_cast<std::size_t>(p)]);
        return take;
      };
      const int taken = draw(old_b, old_take) + draw(new_b, new_take);
      labels.insert(labels.end(), static_cast<std::size_t>(taken), id);
    }

    LabeledDataset dataset;
    dataset.n_classes = input_.n_animals;
    dataset.init(static_cast<int>(rows.size()), input_.image_side);
    for (std::size_t i = 0; i < rows.size(); ++i)
      dataset.set_item(static_cast<int>(i),
                       input_.images.row(rows[i]).transpose(), labels[i]);
    return dataset;
  }

  LabeledDataset build_global_dataset(
      const std::vector<std::pair<int, int>>& labelled_members) {
    Rng rng(derive_seed(params_.seed, 0x91d5 + train_counter_));
    std::vector<int> rows;
    std::vector<int> labels;
    const int cap = params_.max_images_per_identity;
    for (const auto& [frag, identity] : labelled_members) {
      const auto [begin, end] =
          input_.fragment_rows[static_cast<std::size_t>(frag)];
      std::vector<int> all(static_cast<std::size_t>(end - begin));
      std::iota(all.begin(), all.end(), begin);
      if (static_cast<int>(all.size()) > cap) {
        const std::vector<int> pick =
            rng.sample_without_replacement(static_cast<int>(all.size()), cap);
        for (const int p : pick) rows.push_back(all[static_cast<std::size_t>(p)]);
        labels.insert(labels.end(), static_cast<std::size_t>(cap), identity);
      } else {
        rows.insert(rows.end(), all.begin(), all.end());
        labels.insert(labels.end(), all.size(), identity);
      }
    }
    LabeledDataset dataset;
    dataset.n_classes = input_.n_animals;
    dataset.init(static_cast<int>(rows.size()), input_.image_side);
    for (std::size_t i = 0; i < rows.size(); ++i)
      dataset.set_item(static_cast<int>(i),
                       input_.images.row(rows[i]).transpose(), labels[i]);
    return dataset;
  }

  // --- training / identification ----------------------------------------

  TrainHistory train_model(const LabeledDataset& dataset, bool freeze,
                           ProtocolOutcome& outcome, int protocol,
                           int iteration) {
    TrainConfig cfg = params_.train;
    cfg.seed = derive_seed(params_.seed, 0x7e57 + train_counter_);
    ++train_counter_;
    cfg.freeze_features = freeze;
    const TrainHistory history = train(*model_, dataset, cfg);
    if (history.outcome == StopReason::diverged)
      throw CascadeError("identification training diverged");
    if (history.outcome == StopReason::epoch_cap)
      outcome.warnings.push_back("identification training hit the epoch cap");
    CascadeIterationLog log;
    log.protocol = protocol;
    log.iteration = iteration;
    log.images_accumulated = images_accumulated_;
    log.coverage = coverage();
    log.train_epochs = history.size();
    log.val_accuracy =
        history.epochs.empty() ? 0.0 : history.epochs.back().val_accuracy;
    outcome.log.push_back(log);
    return history;
  }

  void identify_open_global_fragments() {
    for (int f = 0; f < input_.fragment_count(); ++f) {
      if (!in_global_[static_cast<std::size_t>(f)]) continue;
      FragmentIdentity& st = states_[static_cast<std::size_t>(f)];
      if (st.is_fixed()) continue;
      st.dist = identify_fragment(*model_, input_.fragment_image_rows(f));
      st.state = IdentityState::unassigned;
      st.identity = -1;
    }
  }

  // One assessment sweep. Returns accepted globals; their members' temporary
  // identities are committed for the rest of the sweep.
  std::vector<int> sweep(int seed_global) {
    std::fill(committed_.begin(), committed_.end(), -1);
    std::vector<int> accepted;
    for (const int g : assessment_order(seed_global)) {
      if (global_done_[static_cast<std::size_t>(g)]) continue;
      const GlobalAssessment assessment = assess_global_fragment(
          input_, input_.globals[static_cast<std::size_t>(g)], states_,
          committed_, params_.certainty_threshold);
      if (!assessment.acceptable) continue;
      for (const auto& [frag, identity] : assessment.temporary_ids)
        committed_[static_cast<std::size_t>(frag)] = identity;
      accepted.push_back(g);
    }
    return accepted;
  }

  // Partial accumulation candidates given the current sweep's claims.
  std::vector<std::pair<int, int>> partial_candidates() {
    std::vector<std::pair<int, int>> picks;
    if (coverage() <= params_.partial_enable_fraction) return picks;
    auto claimed_near = [&](int frag, int identity) {
      for (const int c : input_.coexisting[static_cast<std::size_t>(frag)]) {
        const FragmentIdentity& st = states_[static_cast<std::size_t>(c)];
        if (st.is_fixed() && st.identity == identity) return true;
        if (committed_[static_cast<std::size_t>(c)] == identity) return true;
        for (const auto& [pf, pi] : picks)
          if (pf == c && pi == identity) return true;
      }
      return false;
    };
    for (int f = 0; f < input_.fragment_count(); ++f) {
      if (!in_global_[static_cast<std::size_t>(f)]) continue;
      const FragmentIdentity& st = states_[static_cast<std::size_t>(f)];
      if (st.is_fixed()) continue;
      if (committed_[static_cast<std::size_t>(f)] >= 0) continue;  // accepted already
      if (st.dist.p1.size() == 0) continue;
      if (st.dist.certainty <= params_.certainty_threshold) continue;
      const auto& neighbours = input_.coexisting[static_cast<std::size_t>(f)];
      int fixed_neighbours = 0;
      for (const int c : neighbours)
        if (states_[static_cast<std::size_t>(c)].is_fixed()) ++fixed_neighbours;
      if (2 * fixed_neighbours < static_cast<int>(neighbours.size())) continue;
      Eigen::Index arg;
      st.dist.p1.maxCoeff(&arg);
      const int identity = static_cast<int>(arg);
      if (claimed_near(f, identity)) continue;
      picks.emplace_back(f, identity);
    }
    return picks;
  }

  // --- protocols ----------------------------------------------------------

  bool protocol1(ProtocolOutcome& outcome) {
    const int seed_global = sigma_[0];
    seed_global_ = seed_global;
    const auto seed_labels = random_unique_labels(
        input_.globals[static_cast<std::size_t>(seed_global)],
        derive_seed(params_.seed, 1));
    for (const auto& [frag, identity] : seed_labels)
      fix_fragment(frag, identity, 0);
    mark_done_globals();

    model_.emplace(input_.image_side, params_.hidden_units, input_.n_animals,
                   derive_seed(params_.seed, 0x0de1));
    train_model(build_accumulated_dataset(0), false, outcome, 1, 0);
    identify_open_global_fragments();
    pending_globals_ = sweep(seed_global);

    long accepted_images = images_accumulated_;
    std::vector<char> counted(static_cast<std::size_t>(input_.fragment_count()), 0);
    for (const int g : pending_globals_)
      for (const int f :
           input_.globals[static_cast<std::size_t>(g)].members) {
        if (states_[static_cast<std::size_t>(f)].is_fixed()) continue;
        if (counted[static_cast<std::size_t>(f)]) continue;
        counted[static_cast<std::size_t>(f)] = 1;
        accepted_images += input_.fragment_images(f);
      }
    const double p1_coverage =
        total_global_images_ == 0
            ? 0.0
            : static_cast<double>(accepted_images) / total_global_images_;
    outcome.protocol1_coverage_observed = p1_coverage;

    if (p1_coverage >= params_.protocol1_coverage) {
      // Accepted members keep their temporary identities as final.
      for (const int g : pending_globals_) {
        for (const int f : input_.globals[static_cast<std::size_t>(g)].members)
          if (!states_[static_cast<std::size_t>(f)].is_fixed())
            fix_fragment(f, committed_[static_cast<std::size_t>(f)], 0);
        global_done_[static_cast<std::size_t>(g)] = true;
      }
      mark_done_globals();
      return true;
    }
    return false;
  }

  // Accumulation loop shared by protocol 2 and the parachute. pending_globals_
  // carries the acceptable set discovered by the previous sweep.
  double run_accumulation(ProtocolOutcome& outcome, int protocol, bool freeze) {
    std::vector<std::pair<int, int>> pending_partials;
    for (int iteration = 1;; ++iteration) {
      long fixed_now = 0;
      for (const int g : pending_globals_) {
        for (const int f : input_.globals[static_cast<std::size_t>(g)].members)
          if (!states_[static_cast<std::size_t>(f)].is_fixed()) {
            fix_fragment(f, committed_[static_cast<std::size_t>(f)], iteration);
            ++fixed_now;
          }
        global_done_[static_cast<std::size_t>(g)] = true;
      }
      for (const auto& [frag, identity] : pending_partials) {
        if (!states_[static_cast<std::size_t>(frag)].is_fixed()) {
          fix_fragment(frag, identity, iteration);
          ++fixed_now;
        }
      }
      pending_globals_.clear();
      pending_partials.clear();
      mark_done_globals();

      if (coverage() >= params_.accumulation_target) break;
      if (fixed_now == 0 && iteration > 1) break;
      if (fixed_now == 0 && iteration == 1) {
        // Nothing acceptable beyond the seed; still retrain once so that the
        // sweep below sees a model trained on the fixed set.
      }

      train_model(build_accumulated_dataset(iteration), freeze, outcome,
                  protocol, iteration);
      identify_open_global_fragments();
      pending_globals_ = sweep(seed_global_);
      pending_partials = partial_candidates();
      if (pending_globals_.empty() && pending_partials.empty()) break;
    }
    return coverage();
  }

  bool protocol2(ProtocolOutcome& outcome) {
    const double final_coverage = run_accumulation(outcome, 2, false);
    outcome.protocol2_coverage_observed = final_coverage;
    return final_coverage >= params_.protocol2_success;
  }

  void protocol3(ProtocolOutcome& outcome) {
    // Pretraining over the sigma-ordered globals, wiping all identification
    // so far; the feature stage carries over between globals, the
    // classification stage restarts.
    reset_identities();
    model_.emplace(input_.image_side, params_.hidden_units, input_.n_animals,
                   derive_seed(params_.seed, 0x0de3));
    std::vector<char> used(static_cast<std::size_t>(input_.fragment_count()), 0);
    long used_images = 0;
    int pretrain_steps = 0;
    for (const int g : sigma_) {
      const auto labels = random_unique_labels(
          input_.globals[static_cast<std::size_t>(g)],
          derive_seed(params_.seed, 0x3000 + static_cast<std::uint64_t>(g)));
      model_->reinit_classifier(
          derive_seed(params_.seed, 0x3100 + static_cast<std::uint64_t>(g)));
      train_model(build_global_dataset(labels), false, outcome, 3,
                  -(++pretrain_steps));
      for (const auto& [frag, identity] : labels) {
        if (!used[static_cast<std::size_t>(frag)]) {
          used[static_cast<std::size_t>(frag)] = 1;
          used_images += input_.fragment_images(frag);
        }
      }
      if (static_cast<double>(used_images) >=
          params_.pretrain_coverage * static_cast<double>(total_global_images_))
        break;
    }
    const ClassifierModel pretrained = *model_;

    // Accumulation parachute: frozen feature stage, seeds tried in sigma
    // order, best attempt by images accumulated wins.
    struct Attempt {
      std::vector<FragmentIdentity> states;
      ClassifierModel model;
      long images = 0;
      double coverage = 0.0;
      int seed_global = -1;
      std::vector<char> global_done;
    };
    std::vector<Attempt> attempts;
    const int max_attempts = std::min<int>(
        params_.parachute_attempts, static_cast<int>(sigma_.size()));
    for (int k = 0; k < max_attempts; ++k) {
      reset_identities();
      model_.emplace(pretrained);
      model_->reinit_classifier(
          derive_seed(params_.seed, 0x3200 + static_cast<std::uint64_t>(k)));
      seed_global_ = sigma_[static_cast<std::size_t>(k)];
      const auto seed_labels = random_unique_labels(
          input_.globals[static_cast<std::size_t>(seed_global_)],
          derive_seed(params_.seed, 0x3300 + static_cast<std::uint64_t>(k)));
      for (const auto& [frag, identity] : seed_labels)
        fix_fragment(frag, identity, 0);
      mark_done_globals();
      train_model(build_accumulated_dataset(0), true, outcome, 3, 0);
      identify_open_global_fragments();
      pending_globals_ = sweep(seed_global_);
      const double cov = run_accumulation(outcome, 3, true);
      attempts.push_back({states_, *model_, images_accumulated_, cov,
                          seed_global_, global_done_});
      outcome.protocol3_attempt_coverages.push_back(cov);
      if (cov >= params_.protocol2_success) break;
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < attempts.size(); ++i)
      if (attempts[i].images > attempts[best].images) best = i;
    states_ = attempts[best].states;
    model_.emplace(attempts[best].model);
    images_accumulated_ = attempts[best].images;
    seed_global_ = attempts[best].seed_global;
    global_done_ = attempts[best].global_done;

    if (attempts[best].coverage >= params_.protocol2_success) {
      outcome.status = ProtocolStatus::protocol3_done;
    } else {
      outcome.status = ProtocolStatus::degraded;
      outcome.warnings.push_back(
          "all parachute attempts accumulated less than the success threshold");
    }
  }

  void finish(ProtocolOutcome& outcome) {
    outcome.model = *model_;
    outcome.identities = states_;
    outcome.seed_global = seed_global_;
    outcome.images_accumulated = images_accumulated_;
    outcome.coverage = coverage();
  }

  const CascadeInput& input_;
  const CascadeParams& params_;
  std::vector<FragmentIdentity> states_;
  std::vector<int> committed_;
  std::vector<char> in_global_;
  std::vector<char> global_done_;
  std::vector<int> sigma_;
  std::vector<int> pending_globals_;
  std::optional<ClassifierModel> model_;
  long total_global_images_ = 0;
  long images_accumulated_ = 0;
  int seed_global_ = -1;
  std::uint64_t train_counter_ = 0;
};

}  // namespace

ProtocolOutcome run_cascade(const CascadeInput& input,
                            const CascadeParams& params) {
  CascadeDriver driver(input, params);
  ProtocolOutcome outcome = driver.run();
  return outcome;
}

}  // namespace fragtrack
