#pragma once

#include "fragtrack/cascade.hpp"

namespace fragtrack {

// P2(F,i) = P1(F,i) * prod over coexisting identified fragments of
// (1 - P1(coexisting,i)), renormalized. A zero denominator yields the
// all-zero vector (fragment unidentifiable).
Eigen::VectorXd compute_p2(
    const Eigen::VectorXd& p1,
    const std::vector<const Eigen::VectorXd*>& coexisting_p1);

// cert̄(F) = P2(a)/P2(b) with a, b the first and second maximum of P1.
// Returns +infinity when P2(b) is 0.
double p2_certainty(const Eigen::VectorXd& p2, const Eigen::VectorXd& p1);

// Identifies every fragment the cascade left unassigned, from the most to
// the least certain, excluding identities already held by coexisting
// fragments after each assignment. Mutates `states` in place: assigned
// fragments become temporary with P1 set one-hot; exact-tie fragments become
// non_identifiable.
void residual_identify(const CascadeInput& input, const ClassifierModel& model,
                       std::vector<FragmentIdentity>& states);

}  // namespace fragtrack
