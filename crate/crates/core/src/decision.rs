//! Decision routines driven by the fitted preference model: clustered route
//! selection, car-pool priority ranking, and incentive design.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::choice::{compute_weights, route_value, ParameterMatrix, RawUnitWeights};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::kmeans::kmeans;
use crate::routes::RouteAttributes;
use crate::scaler::Scaler;

/// Default value penalty applied to a rider who cancels before departure.
pub const CANCELLATION_PENALTY: f64 = -0.5;

/// Division guard for the time/cost weight ratio.
const MIN_COST_WEIGHT: f64 = 1e-12;

/// Partitions routes into `k` groups by k-means over the standardized
/// `(t, c, t_w)` triples (standardization is fitted on the candidate set
/// itself so clustering is scale-free). With `n <= k` every route is its own
/// cluster.
pub fn cluster_routes(routes: &[RouteAttributes], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 1 {
        return Err(Error::validation("cluster count must be >= 1"));
    }
    if routes.is_empty() {
        return Err(Error::validation("no routes to cluster"));
    }
    let n = routes.len();
    if n <= k {
        return Ok((0..n).collect());
    }

    // Standardize each attribute over the candidate set (population moments,
    // degenerate columns floored to unit scale).
    let mut mean = [0.0f64; 3];
    let mut var = [0.0f64; 3];
    for r in routes {
        let vals = [r.t, r.c, r.t_w];
        for d in 0..3 {
            mean[d] += vals[d];
        }
    }
    for d in 0..3 {
        mean[d] /= n as f64;
    }
    for r in routes {
        let vals = [r.t, r.c, r.t_w];
        for d in 0..3 {
            var[d] += (vals[d] - mean[d]).powi(2);
        }
    }
    let mut std = [1.0f64; 3];
    for d in 0..3 {
        let s = (var[d] / n as f64).sqrt();
        std[d] = if s < 1e-9 { 1.0 } else { s };
    }
    let points: Vec<[f64; 3]> = routes
        .iter()
        .map(|r| {
            [
                (r.t - mean[0]) / std[0],
                (r.c - mean[1]) / std[1],
                (r.t_w - mean[2]) / std[2],
            ]
        })
        .collect();
    Ok(kmeans(&points, k, seed))
}

/// Picks the displayed routes: clusters the candidates, then returns the
/// index of the highest-value route within each nonempty cluster (ties to
/// the lowest candidate index). Output is ordered by cluster label and has
/// exactly `min(k, n)` entries.
pub fn select_routes(
    point_estimate: &ParameterMatrix,
    scaler: &Scaler,
    features: &FeatureVector,
    candidates: &[RouteAttributes],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::validation("no candidate routes"));
    }
    if k < 1 {
        return Err(Error::validation("route count k must be >= 1"));
    }
    let w = compute_weights(point_estimate, features)?;
    let labels = cluster_routes(candidates, k, seed)?;
    let n_clusters = labels.iter().max().unwrap() + 1;

    let mut best: Vec<Option<(usize, f64)>> = vec![None; n_clusters];
    for (i, (r, &label)) in candidates.iter().zip(labels.iter()).enumerate() {
        let v = route_value(&w, &scaler.apply_route(r));
        match best[label] {
            Some((_, bv)) if bv >= v => {}
            _ => best[label] = Some((i, v)),
        }
    }
    let mut selected: Vec<usize> = best.into_iter().flatten().map(|(i, _)| i).collect();

    // Duplicate candidates can collapse clusters; pad with the lowest unused
    // indices so the result still has min(k, n) distinct routes.
    let want = k.min(candidates.len());
    if selected.len() < want {
        let taken: std::collections::BTreeSet<usize> = selected.iter().copied().collect();
        for i in 0..candidates.len() {
            if selected.len() == want {
                break;
            }
            if !taken.contains(&i) {
                selected.push(i);
            }
        }
    }
    Ok(selected)
}

/// A prospective car-pool passenger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateUser {
    pub id: String,
    pub features: FeatureVector,
    pub reduced_mobility: bool,
    /// Minutes of walking to reach the pick-up point.
    pub walking_time_to_pickup: f64,
    /// Externally supplied CO₂ savings (kg) from pooling this user.
    pub emission_savings: f64,
    /// Users this candidate refuses to share a ride with.
    #[serde(default)]
    pub vetoes: BTreeSet<String>,
}

/// A driver's offered ride.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RideOffer {
    pub driver_id: String,
    pub route: RouteAttributes,
    pub capacity: usize,
    #[serde(default)]
    pub driver_vetoes: BTreeSet<String>,
}

/// Priority tier a candidate was ranked under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriorityTier {
    /// Reduced-mobility users, by increasing walking time.
    ReducedMobility = 1,
    /// Users with positive emission savings, by decreasing savings.
    EmissionSavings = 2,
    /// Everyone else, by decreasing model value of the pooled route.
    PreferenceValue = 3,
}

/// One entry of the ranked offer list.
#[derive(Debug, Clone, Serialize)]
pub struct RankedCandidate {
    pub id: String,
    pub tier: PriorityTier,
    /// Model value of the car-pool route for this user (penalties included).
    pub value: f64,
    /// Two-route acceptance probability of the pooled route against the
    /// candidate's alternative.
    pub accept_probability: f64,
}

/// Ranked seat offers truncated to capacity, plus the waiting list.
#[derive(Debug, Clone, Serialize)]
pub struct CarpoolRanking {
    pub offers: Vec<RankedCandidate>,
    pub waiting: Vec<RankedCandidate>,
}

/// Two-option Plackett–Luce probability that `first` is preferred over
/// `second` (standardized attributes).
fn two_route_probability(
    w: &crate::choice::WeightVector,
    first: &RouteAttributes,
    second: &RouteAttributes,
) -> f64 {
    let v1 = route_value(w, first);
    let v2 = route_value(w, second);
    1.0 / (1.0 + (v2 - v1).exp())
}

/// Ranks candidates for a seat offer.
///
/// Vetoed pairs (either direction) are removed, then three priority tiers
/// order the rest; within capacity the list becomes seat offers, the
/// remainder a waiting list. `alt_routes[i]` is candidate `i`'s best
/// non-pooled alternative, used for the reported acceptance probability.
/// `penalties` carries accumulated cancellation penalties by user id.
pub fn rank_carpool(
    offer: &RideOffer,
    candidates: &[CandidateUser],
    alt_routes: &[RouteAttributes],
    point_estimate: &ParameterMatrix,
    scaler: &Scaler,
    penalties: &BTreeMap<String, f64>,
) -> Result<CarpoolRanking> {
    if candidates.len() != alt_routes.len() {
        return Err(Error::validation(format!(
            "{} candidates but {} alternative routes",
            candidates.len(),
            alt_routes.len()
        )));
    }

    let pooled = scaler.apply_route(&offer.route);
    let mut ranked: Vec<(RankedCandidate, f64, f64)> = Vec::new();
    for (cand, alt) in candidates.iter().zip(alt_routes.iter()) {
        if cand.vetoes.contains(&offer.driver_id) || offer.driver_vetoes.contains(&cand.id) {
            continue;
        }
        let w = compute_weights(point_estimate, &cand.features)?;
        let penalty = penalties.get(&cand.id).copied().unwrap_or(0.0);
        let value = route_value(&w, &pooled) + penalty;
        let accept = two_route_probability(&w, &pooled, &scaler.apply_route(alt));
        let tier = if cand.reduced_mobility {
            PriorityTier::ReducedMobility
        } else if cand.emission_savings > 0.0 {
            PriorityTier::EmissionSavings
        } else {
            PriorityTier::PreferenceValue
        };
        ranked.push((
            RankedCandidate {
                id: cand.id.clone(),
                tier,
                value,
                accept_probability: accept,
            },
            cand.walking_time_to_pickup,
            cand.emission_savings,
        ));
    }

    ranked.sort_by(|(a, walk_a, em_a), (b, walk_b, em_b)| {
        a.tier.cmp(&b.tier).then_with(|| match a.tier {
            PriorityTier::ReducedMobility => walk_a.partial_cmp(walk_b).unwrap(),
            PriorityTier::EmissionSavings => em_b.partial_cmp(em_a).unwrap(),
            PriorityTier::PreferenceValue => b.value.partial_cmp(&a.value).unwrap(),
        })
    });

    let mut offers: Vec<RankedCandidate> = ranked.into_iter().map(|(r, _, _)| r).collect();
    let waiting = offers.split_off(offer.capacity.min(offers.len()));
    Ok(CarpoolRanking { offers, waiting })
}

/// Records a pre-departure cancellation: the rider's value is penalized in
/// subsequent rankings.
pub fn record_cancellation(penalties: &mut BTreeMap<String, f64>, user_id: &str) {
    *penalties.entry(user_id.to_string()).or_insert(0.0) += CANCELLATION_PENALTY;
}

/// Minimum incentive making a detour as attractive as the baseline route.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IncentiveQuote {
    /// `(w_t/w_c)·(t₂ − t₁) − (c₁ − c₂)`, possibly negative when the detour
    /// is already preferred.
    pub incentive: f64,
    /// The incentive clamped at zero, for callers that cannot pay negative
    /// amounts.
    pub floored: f64,
}

/// Closed-form minimum incentive from the two-route odds identity; weights
/// must be in raw attribute units (see [`crate::WeightVector::in_raw_units`]).
pub fn min_incentive(
    w: &RawUnitWeights,
    baseline: &RouteAttributes,
    detour: &RouteAttributes,
) -> Result<IncentiveQuote> {
    if w.cost <= MIN_COST_WEIGHT {
        return Err(Error::numeric(format!(
            "cost weight {} too small to divide by",
            w.cost
        )));
    }
    let incentive = w.time / w.cost * (detour.t - baseline.t) - (baseline.c - detour.c);
    Ok(IncentiveQuote {
        incentive,
        floored: incentive.max(0.0),
    })
}

/// A passenger served by a detour, with their non-pooled alternative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassengerOption {
    pub features: FeatureVector,
    pub alternative: RouteAttributes,
}

/// One candidate detour route and the passengers it would serve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetourOption {
    pub route: RouteAttributes,
    #[serde(default)]
    pub passengers: Vec<PassengerOption>,
}

/// Incentive optimization instance: a driver, their baseline route, the
/// candidate detours, and the search grid.
#[derive(Debug, Clone)]
pub struct IncentiveProblem {
    pub driver: FeatureVector,
    pub baseline: RouteAttributes,
    pub detours: Vec<DetourOption>,
    /// Grid upper bound (currency units).
    pub i_max: f64,
    /// Grid spacing.
    pub step: f64,
    /// Platform cost per unit of incentive in the objective `E[U] − κ·I`.
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IncentiveSolution {
    /// Grid-optimal incentive (smallest in case of ties).
    pub incentive: f64,
    /// Expected total utility at the optimum.
    pub expected_utility: f64,
    /// `expected_utility − κ·incentive` at the optimum.
    pub objective: f64,
}

/// Expected total utility of offering incentive `i`: for each detour, the
/// driver's two-route acceptance of the detour (cost reduced by `i`) against
/// the baseline, times every passenger's acceptance of it against their
/// alternative, times the summed route values of driver and passengers
/// (nominal attributes).
fn expected_utility(
    problem: &IncentiveProblem,
    point_estimate: &ParameterMatrix,
    scaler: &Scaler,
    i: f64,
) -> Result<f64> {
    let w_driver = compute_weights(point_estimate, &problem.driver)?;
    let baseline_std = scaler.apply_route(&problem.baseline);
    let mut total = 0.0;
    for detour in &problem.detours {
        let discounted = RouteAttributes::new(detour.route.t, detour.route.c - i, detour.route.t_w);
        let p_driver =
            two_route_probability(&w_driver, &scaler.apply_route(&discounted), &baseline_std);

        let detour_std = scaler.apply_route(&detour.route);
        let mut p_passengers = 1.0;
        let mut utility = route_value(&w_driver, &detour_std);
        for passenger in &detour.passengers {
            let w_p = compute_weights(point_estimate, &passenger.features)?;
            p_passengers *= two_route_probability(
                &w_p,
                &detour_std,
                &scaler.apply_route(&passenger.alternative),
            );
            utility += route_value(&w_p, &detour_std);
        }
        total += p_driver * p_passengers * utility;
    }
    Ok(total)
}

/// Grid search of `E_I[U] − κ·I` over `I ∈ {0, step, …, i_max}`; ties pick
/// the smallest incentive.
pub fn optimize_incentive(
    problem: &IncentiveProblem,
    point_estimate: &ParameterMatrix,
    scaler: &Scaler,
) -> Result<IncentiveSolution> {
    if problem.detours.is_empty() {
        return Err(Error::validation("incentive problem has no detour routes"));
    }
    if !(problem.i_max > 0.0) || !(problem.step > 0.0) {
        return Err(Error::validation("incentive grid needs i_max > 0 and step > 0"));
    }

    let n_steps = (problem.i_max / problem.step + 1e-9).floor() as usize;
    let mut best: Option<IncentiveSolution> = None;
    for gi in 0..=n_steps {
        let i = gi as f64 * problem.step;
        let utility = expected_utility(problem, point_estimate, scaler, i)?;
        let objective = utility - problem.kappa * i;
        let better = match &best {
            None => true,
            Some(b) => objective > b.objective,
        };
        if better {
            best = Some(IncentiveSolution {
                incentive: i,
                expected_utility: utility,
                objective,
            });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::{choice_odds, WeightVector};
    use crate::features::AgeGroup;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn z() -> FeatureVector {
        FeatureVector::from_parts(AgeGroup::Active, 0.5, false, 0.5, 0).unwrap()
    }

    fn random_routes(rng: &mut ChaCha8Rng, n: usize) -> Vec<RouteAttributes> {
        (0..n)
            .map(|_| {
                let t = 10.0 + 70.0 * rng.random::<f64>();
                RouteAttributes::new(t, 10.0 + 30.0 * rng.random::<f64>(), t * rng.random::<f64>())
            })
            .collect()
    }

    #[test]
    fn cluster_one_route_per_cluster_when_n_le_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let routes = random_routes(&mut rng, 4);
        assert_eq!(cluster_routes(&routes, 4, 1).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(cluster_routes(&routes, 9, 1).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cluster_k1_labels_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let routes = random_routes(&mut rng, 6);
        assert_eq!(cluster_routes(&routes, 1, 0).unwrap(), vec![0; 6]);
    }

    // Brute-force optimal 2-partition oracle on a small separated instance.
    #[test]
    fn cluster_matches_bruteforce_on_separated_groups() {
        let mut routes = Vec::new();
        for i in 0..5 {
            let eps = i as f64 * 0.1;
            routes.push(RouteAttributes::new(10.0 + eps, 35.0 - eps, 2.0 + eps));
            routes.push(RouteAttributes::new(70.0 + eps, 12.0 - eps, 40.0 + eps));
        }
        let n = routes.len();
        let labels = cluster_routes(&routes, 2, 3).unwrap();

        // Oracle: enumerate all 2-partitions, minimize within-cluster sum of
        // squared distances on the same standardized coordinates.
        let mut mean = [0.0f64; 3];
        for r in &routes {
            mean[0] += r.t;
            mean[1] += r.c;
            mean[2] += r.t_w;
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = [0.0f64; 3];
        for r in &routes {
            var[0] += (r.t - mean[0]).powi(2);
            var[1] += (r.c - mean[1]).powi(2);
            var[2] += (r.t_w - mean[2]).powi(2);
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        let pts: Vec<[f64; 3]> = routes
            .iter()
            .map(|r| {
                [
                    (r.t - mean[0]) / std[0],
                    (r.c - mean[1]) / std[1],
                    (r.t_w - mean[2]) / std[2],
                ]
            })
            .collect();
        let cost = |assign: &[bool]| -> f64 {
            let mut total = 0.0;
            for side in [false, true] {
                let members: Vec<&[f64; 3]> =
                    pts.iter().zip(assign).filter(|(_, &a)| a == side).map(|(p, _)| p).collect();
                if members.is_empty() {
                    return f64::INFINITY;
                }
                let mut c = [0.0f64; 3];
                for m in &members {
                    for d in 0..3 {
                        c[d] += m[d];
                    }
                }
                for cd in c.iter_mut() {
                    *cd /= members.len() as f64;
                }
                for m in &members {
                    for d in 0..3 {
                        total += (m[d] - c[d]).powi(2);
                    }
                }
            }
            total
        };
        let mut best_assign = vec![false; n];
        let mut best_cost = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let assign: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let c = cost(&assign);
            if c < best_cost {
                best_cost = c;
                best_assign = assign;
            }
        }
        // Same partition up to label swap.
        let same = (0..n).all(|i| (labels[i] == labels[0]) == (best_assign[i] == best_assign[0]));
        assert!(same, "kmeans {labels:?} vs oracle {best_assign:?}");
    }

    #[test]
    fn select_routes_within_cluster_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = ParameterMatrix::reference();
        let scaler = Scaler::identity();
        for trial in 0..50 {
            let candidates = random_routes(&mut rng, 20);
            let selected = select_routes(&params, &scaler, &z(), &candidates, 4, trial).unwrap();
            assert_eq!(selected.len(), 4);
            let labels = cluster_routes(&candidates, 4, trial).unwrap();
            let w = compute_weights(&params, &z()).unwrap();
            for &idx in &selected {
                let label = labels[idx];
                let v_sel = route_value(&w, &scaler.apply_route(&candidates[idx]));
                for (j, r) in candidates.iter().enumerate() {
                    if labels[j] == label {
                        let v = route_value(&w, &scaler.apply_route(r));
                        assert!(v <= v_sel + 1e-12);
                        if v == v_sel {
                            assert!(idx <= j, "tie must break to the lowest index");
                        }
                    }
                }
            }
            // Pairwise distinct.
            let mut sorted = selected.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), selected.len());
        }
    }

    #[test]
    fn select_routes_identical_candidates_tie_rule() {
        let candidates = vec![RouteAttributes::new(20.0, 15.0, 5.0); 10];
        let selected = select_routes(
            &ParameterMatrix::zeros(),
            &Scaler::identity(),
            &z(),
            &candidates,
            3,
            0,
        )
        .unwrap();
        // All candidates coincide so any k distinct indices work, but the
        // result must be deterministic and lowest-index-first per cluster.
        let again = select_routes(
            &ParameterMatrix::zeros(),
            &Scaler::identity(),
            &z(),
            &candidates,
            3,
            0,
        )
        .unwrap();
        assert_eq!(selected, again);
        assert_eq!(selected.len(), 3);
        let mut dedup = selected.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 3);
    }

    #[test]
    fn select_routes_pure_time_weights_pick_fastest() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // a2, a3 strongly negative => w ≈ (1, 0, 0).
        let mut params = ParameterMatrix::zeros();
        params.a2 = [-40.0, -40.0, -40.0, 0.0, 0.0, 0.0, 0.0];
        params.a3 = [-40.0, -40.0, -40.0, 0.0, 0.0, 0.0, 0.0];
        let candidates = random_routes(&mut rng, 15);
        let scaler = Scaler::identity();
        let selected = select_routes(&params, &scaler, &z(), &candidates, 3, 9).unwrap();
        let labels = cluster_routes(&candidates, 3, 9).unwrap();
        for &idx in &selected {
            for (j, r) in candidates.iter().enumerate() {
                if labels[j] == labels[idx] {
                    assert!(candidates[idx].t <= r.t + 1e-9);
                }
            }
        }
    }

    fn candidate(id: &str, mobility: bool, walk: f64, emissions: f64) -> CandidateUser {
        CandidateUser {
            id: id.into(),
            features: z(),
            reduced_mobility: mobility,
            walking_time_to_pickup: walk,
            emission_savings: emissions,
            vetoes: BTreeSet::new(),
        }
    }

    fn ride(capacity: usize) -> RideOffer {
        RideOffer {
            driver_id: "driver".into(),
            route: RouteAttributes::new(25.0, 5.0, 2.0),
            capacity,
            driver_vetoes: BTreeSet::new(),
        }
    }

    fn alt() -> RouteAttributes {
        RouteAttributes::new(45.0, 8.0, 12.0)
    }

    #[test]
    fn reduced_mobility_ranks_first() {
        let mut candidates: Vec<CandidateUser> =
            (0..10).map(|i| candidate(&format!("u{i}"), false, 5.0, i as f64)).collect();
        candidates[7].reduced_mobility = true;
        let alts = vec![alt(); 10];
        let ranking = rank_carpool(
            &ride(10),
            &candidates,
            &alts,
            &ParameterMatrix::reference(),
            &Scaler::identity(),
            &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(ranking.offers[0].id, "u7");
        assert_eq!(ranking.offers[0].tier, PriorityTier::ReducedMobility);
    }

    #[test]
    fn tier1_sorted_by_walking_time() {
        let candidates = vec![
            candidate("a", true, 5.0, 0.0),
            candidate("b", true, 2.0, 0.0),
            candidate("c", true, 9.0, 0.0),
        ];
        let alts = vec![alt(); 3];
        let ranking = rank_carpool(
            &ride(3),
            &candidates,
            &alts,
            &ParameterMatrix::reference(),
            &Scaler::identity(),
            &BTreeMap::new(),
        )
        .unwrap();
        let ids: Vec<&str> = ranking.offers.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a", "c"]);
    }

    #[test]
    fn tier3_sorted_by_descending_value() {
        // Vary slack so the model value differs per candidate; emission
        // savings are zero so everyone lands in tier 3.
        let params = ParameterMatrix::reference();
        let scaler = Scaler::identity();
        let mut candidates = Vec::new();
        for i in 0..6 {
            let mut c = candidate(&format!("u{i}"), false, 1.0, 0.0);
            c.features = FeatureVector::from_parts(
                AgeGroup::Active,
                0.1 * i as f64,
                i % 2 == 0,
                0.15 * i as f64,
                0,
            )
            .unwrap();
            candidates.push(c);
        }
        let alts = vec![alt(); candidates.len()];
        let ranking = rank_carpool(
            &ride(candidates.len()),
            &candidates,
            &alts,
            &params,
            &scaler,
            &BTreeMap::new(),
        )
        .unwrap();
        // Independent recomputation of each candidate's value.
        let mut expected: Vec<(String, f64)> = candidates
            .iter()
            .map(|c| {
                let w = compute_weights(&params, &c.features).unwrap();
                (c.id.clone(), route_value(&w, &scaler.apply_route(&ride(1).route)))
            })
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let got: Vec<&str> = ranking.offers.iter().map(|r| r.id.as_str()).collect();
        let want: Vec<&str> = expected.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn vetoes_are_mutual_and_capacity_truncates() {
        let mut candidates = vec![
            candidate("a", false, 1.0, 3.0),
            candidate("b", false, 1.0, 2.0),
            candidate("c", false, 1.0, 1.0),
        ];
        candidates[0].vetoes.insert("driver".into());
        let mut offer = ride(1);
        offer.driver_vetoes.insert("b".into());
        let alts = vec![alt(); 3];
        let ranking = rank_carpool(
            &offer,
            &candidates,
            &alts,
            &ParameterMatrix::reference(),
            &Scaler::identity(),
            &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(ranking.offers.len(), 1);
        assert_eq!(ranking.offers[0].id, "c");
        assert!(ranking.waiting.is_empty());
    }

    // The operational loop: a rider cancels, gets penalized, and drops in
    // the next ranking round.
    #[test]
    fn cancellation_penalty_demotes_rider() {
        let candidates = vec![candidate("a", false, 1.0, 0.0), candidate("b", false, 1.0, 0.0)];
        let alts = vec![alt(); 2];
        let params = ParameterMatrix::reference();
        let scaler = Scaler::identity();
        let mut penalties = BTreeMap::new();
        let first = rank_carpool(&ride(2), &candidates, &alts, &params, &scaler, &penalties)
            .unwrap();
        // Identical users: order falls back to input order.
        assert_eq!(first.offers[0].id, "a");
        record_cancellation(&mut penalties, "a");
        let second = rank_carpool(&ride(2), &candidates, &alts, &params, &scaler, &penalties)
            .unwrap();
        assert_eq!(second.offers[0].id, "b");
        assert!(second.offers[1].value < first.offers[0].value);
    }

    #[test]
    fn min_incentive_examples() {
        let w = RawUnitWeights {
            time: 0.4,
            cost: 0.4,
            walk: 0.2,
        };
        let baseline = RouteAttributes::new(30.0, 10.0, 0.0);
        let detour = RouteAttributes::new(40.0, 10.0, 0.0);
        let q = min_incentive(&w, &baseline, &detour).unwrap();
        assert!((q.incentive - 10.0).abs() < 1e-12);

        let w = RawUnitWeights {
            time: 0.6,
            cost: 0.3,
            walk: 0.1,
        };
        let q = min_incentive(&w, &baseline, &detour).unwrap();
        assert!((q.incentive - 20.0).abs() < 1e-12);

        let w = RawUnitWeights {
            time: 0.5,
            cost: 0.0,
            walk: 0.5,
        };
        assert!(min_incentive(&w, &baseline, &detour).is_err());
    }

    #[test]
    fn min_incentive_negative_is_floored_but_reported() {
        let w = RawUnitWeights {
            time: 0.5,
            cost: 0.5,
            walk: 0.0,
        };
        // Detour is faster: incentive comes out negative.
        let baseline = RouteAttributes::new(40.0, 10.0, 0.0);
        let detour = RouteAttributes::new(30.0, 10.0, 0.0);
        let q = min_incentive(&w, &baseline, &detour).unwrap();
        assert!(q.incentive < 0.0);
        assert_eq!(q.floored, 0.0);
    }

    // Defining property: with the returned incentive discounted from the
    // detour cost, the two routes have odds exactly one.
    #[test]
    fn min_incentive_odds_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let logits = [0.0, rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            let w = WeightVector::from_logits(logits).unwrap();
            let baseline = RouteAttributes::new(
                10.0 + 50.0 * rng.random::<f64>(),
                5.0 + 20.0 * rng.random::<f64>(),
                0.0,
            );
            let detour = RouteAttributes::new(
                baseline.t + 30.0 * rng.random::<f64>(),
                5.0 + 20.0 * rng.random::<f64>(),
                0.0,
            );
            let raw = w.in_raw_units(&Scaler::identity());
            let q = min_incentive(&raw, &baseline, &detour).unwrap();
            let discounted =
                RouteAttributes::new(detour.t, detour.c - q.incentive, detour.t_w);
            let odds = choice_odds(&w, &baseline, &discounted);
            assert!((odds - 1.0).abs() < 1e-10, "odds {odds}");
        }
    }

    fn incentive_problem(kappa: f64, i_max: f64) -> IncentiveProblem {
        IncentiveProblem {
            driver: z(),
            baseline: RouteAttributes::new(20.0, 10.0, 0.0),
            detours: vec![DetourOption {
                route: RouteAttributes::new(28.0, 11.0, 1.0),
                passengers: vec![PassengerOption {
                    features: FeatureVector::from_parts(AgeGroup::Young, 0.2, false, 0.8, 0)
                        .unwrap(),
                    alternative: RouteAttributes::new(50.0, 14.0, 15.0),
                }],
            }],
            i_max,
            step: 0.1,
            kappa,
        }
    }

    #[test]
    fn incentive_zero_when_detour_already_preferred_and_kappa_positive() {
        // Detour strictly better on every attribute and positive utility:
        // driver acceptance is near-saturated, so κ dominates.
        let problem = IncentiveProblem {
            driver: z(),
            baseline: RouteAttributes::new(40.0, 20.0, 10.0),
            detours: vec![DetourOption {
                route: RouteAttributes::new(10.0, 2.0, 0.0),
                passengers: vec![],
            }],
            i_max: 5.0,
            step: 0.5,
            kappa: 1.0,
        };
        // Center the scaler so the detour has positive value.
        let scaler = Scaler {
            mean: [30.0, 15.0, 8.0],
            std: [10.0, 8.0, 5.0],
        };
        let sol = optimize_incentive(&problem, &ParameterMatrix::zeros(), &scaler).unwrap();
        assert_eq!(sol.incentive, 0.0);
    }

    #[test]
    fn incentive_hits_grid_max_when_free() {
        // κ = 0 and positive social utility: the objective increases with
        // driver acceptance, which increases with I.
        let problem = IncentiveProblem {
            driver: z(),
            baseline: RouteAttributes::new(20.0, 10.0, 0.0),
            detours: vec![DetourOption {
                route: RouteAttributes::new(30.0, 12.0, 0.0),
                passengers: vec![],
            }],
            i_max: 1.0,
            step: 0.1,
            kappa: 0.0,
        };
        let scaler = Scaler {
            mean: [40.0, 20.0, 5.0],
            std: [10.0, 5.0, 3.0],
        };
        let sol = optimize_incentive(&problem, &ParameterMatrix::zeros(), &scaler).unwrap();
        assert!((sol.incentive - 1.0).abs() < 1e-12, "got {}", sol.incentive);
    }

    #[test]
    fn incentive_matches_bruteforce_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let params = ParameterMatrix::reference();
        let scaler = Scaler {
            mean: [30.0, 15.0, 8.0],
            std: [15.0, 8.0, 6.0],
        };
        for trial in 0..20 {
            let problem = IncentiveProblem {
                driver: FeatureVector::from_parts(
                    AgeGroup::Active,
                    rng.random::<f64>(),
                    trial % 2 == 0,
                    rng.random::<f64>(),
                    0,
                )
                .unwrap(),
                baseline: RouteAttributes::new(
                    20.0 + 20.0 * rng.random::<f64>(),
                    8.0 + 8.0 * rng.random::<f64>(),
                    2.0,
                ),
                detours: vec![
                    DetourOption {
                        route: RouteAttributes::new(
                            25.0 + 20.0 * rng.random::<f64>(),
                            8.0 + 8.0 * rng.random::<f64>(),
                            3.0,
                        ),
                        passengers: vec![PassengerOption {
                            features: z(),
                            alternative: RouteAttributes::new(60.0, 18.0, 20.0),
                        }],
                    },
                    DetourOption {
                        route: RouteAttributes::new(
                            25.0 + 25.0 * rng.random::<f64>(),
                            8.0 + 10.0 * rng.random::<f64>(),
                            4.0,
                        ),
                        passengers: vec![
                            PassengerOption {
                                features: z(),
                                alternative: RouteAttributes::new(55.0, 16.0, 18.0),
                            },
                            PassengerOption {
                                features: FeatureVector::from_parts(
                                    AgeGroup::Retired,
                                    0.4,
                                    false,
                                    0.3,
                                    1,
                                )
                                .unwrap(),
                                alternative: RouteAttributes::new(45.0, 20.0, 10.0),
                            },
                        ],
                    },
                ],
                i_max: 1.0,
                step: 0.1,
                kappa: 0.2,
            };
            let sol = optimize_incentive(&problem, &params, &scaler).unwrap();

            // Independent enumeration over the same 11 grid points.
            let mut best_i = 0.0;
            let mut best_obj = f64::NEG_INFINITY;
            for gi in 0..=10 {
                let i = gi as f64 * 0.1;
                let u = expected_utility(&problem, &params, &scaler, i).unwrap();
                let obj = u - problem.kappa * i;
                if obj > best_obj {
                    best_obj = obj;
                    best_i = i;
                }
            }
            assert_eq!(sol.incentive, best_i);
            assert!((sol.objective - best_obj).abs() < 1e-12);
            // Grid membership.
            let steps = (sol.incentive / problem.step).round();
            assert!((sol.incentive - steps * problem.step).abs() < 1e-9);
        }
    }

    #[test]
    fn incentive_rejects_bad_problems() {
        let mut p = incentive_problem(0.1, 1.0);
        p.detours.clear();
        assert!(optimize_incentive(&p, &ParameterMatrix::zeros(), &Scaler::identity()).is_err());
        let mut p = incentive_problem(0.1, 1.0);
        p.step = 0.0;
        assert!(optimize_incentive(&p, &ParameterMatrix::zeros(), &Scaler::identity()).is_err());
    }
}
