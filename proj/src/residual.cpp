#include "fragtrack/residual.hpp"

#include <algorithm>

namespace fragtrack {

Eigen::VectorXd compute_p2(
    const Eigen::VectorXd& p1,
    const std::vector<const Eigen::VectorXd*>& coexisting_p1) {
  Eigen::VectorXd numerator = p1;
  for (const Eigen::VectorXd* other : coexisting_p1)
    numerator.array() *= (1.0 - other->array());
  const double denominator = numerator.sum();
  if (denominator <= 0.0) return Eigen::VectorXd::Zero(p1.size());
  return numerator / denominator;
}

double p2_certainty(const Eigen::VectorXd& p2, const Eigen::VectorXd& p1) {
  const auto [a, b] = top_two(p1);
  if (p2(b) == 0.0) return std::numeric_limits<double>::infinity();
  return p2(a) / p2(b);
}

void residual_identify(const CascadeInput& input, const ClassifierModel& model,
                       std::vector<FragmentIdentity>& states) {
  const int nf = input.fragment_count();

  // Fresh per-image evidence from the final model for everything unassigned.
  std::vector<int> open;
  for (int f = 0; f < nf; ++f) {
    FragmentIdentity& st = states[static_cast<std::size_t>(f)];
    if (st.is_fixed()) continue;
    st.dist = identify_fragment(model, input.fragment_image_rows(f));
    st.state = IdentityState::unassigned;
    st.identity = -1;
    open.push_back(f);
  }

  auto coexisting_p1_of = [&](int frag) {
    std::vector<const Eigen::VectorXd*> list;
    for (const int c : input.coexisting[static_cast<std::size_t>(frag)]) {
      const FragmentIdentity& st = states[static_cast<std::size_t>(c)];
      if (st.has_identity() && st.dist.p1.size() > 0)
        list.push_back(&st.dist.p1);
    }
    return list;
  };

  std::vector<double> cert2(static_cast<std::size_t>(nf), 0.0);
  auto refresh = [&](int frag) {
    FragmentIdentity& st = states[static_cast<std::size_t>(frag)];
    st.dist.p2 = compute_p2(st.dist.p1, coexisting_p1_of(frag));
    cert2[static_cast<std::size_t>(frag)] =
        st.dist.p2.sum() == 0.0
            ? -1.0  // unidentifiable sorts last
            : p2_certainty(st.dist.p2, st.dist.p1);
  };
  for (const int f : open) refresh(f);

  std::vector<char> done(static_cast<std::size_t>(nf), 0);
  for (std::size_t processed = 0; processed < open.size(); ++processed) {
    int best = -1;
    for (const int f : open) {
      if (done[static_cast<std::size_t>(f)]) continue;
      if (best < 0 || cert2[static_cast<std::size_t>(f)] >
                          cert2[static_cast<std::size_t>(best)])
        best = f;
    }
    if (best < 0) break;
    done[static_cast<std::size_t>(best)] = 1;
    FragmentIdentity& st = states[static_cast<std::size_t>(best)];
    const Eigen::VectorXd& p2 = st.dist.p2;
    if (p2.sum() == 0.0) {
      st.state = IdentityState::non_identifiable;
      st.identity = -1;
      continue;
    }
    Eigen::Index arg;
    const double max_p2 = p2.maxCoeff(&arg);
    int ties = 0;
    for (int i = 0; i < p2.size(); ++i)
      if (p2(i) == max_p2) ++ties;
    if (ties > 1) {
      // Exact tie in the maximum: the fragment stays unidentified.
      st.state = IdentityState::non_identifiable;
      st.identity = -1;
      continue;
    }
    st.state = IdentityState::temporary;
    st.identity = static_cast<int>(arg);
    st.dist.p1 = Eigen::VectorXd::Zero(p2.size());
    st.dist.p1(st.identity) = 1.0;
    for (const int c : input.coexisting[static_cast<std::size_t>(best)])
      if (!done[static_cast<std::size_t>(c)] &&
          !states[static_cast<std::size_t>(c)].is_fixed())
        refresh(c);
  }
}

}  // namespace fragtrack
