//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured values (visible with `--nocapture`).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use trustfabric_core::ans::AnsName;
use trustfabric_core::attest::{deviation, AttestationState, BehavioralFingerprint, FINGERPRINT_DIM};
use trustfabric_core::audit::Detector;
use trustfabric_core::crypto::generate_keypair;
use trustfabric_core::identity::{generate_did, issue_credential, Did};
use trustfabric_core::lpci::{success_probability, layered_defense_bound, threat_surface, AgentSurface, PhaseProbabilities};
use trustfabric_core::memory::{genesis_hash, IntegrityStatus, MemorySource, MemoryStore, Tier};
use trustfabric_core::policy::{authorize, parse_policy, AccessRequest, AuthEnv, Outcome};
use trustfabric_core::rng::DetRng;
use trustfabric_core::tare::{containment_level, ContainmentPolicy};
use trustfabric_core::trust::{
    composite_trust, decay, step, TrustConfig, TrustEvent, TrustState, TrustWeights,
};
use trustfabric_sim::montecarlo::{monte_carlo, defense_grid};
use trustfabric_sim::scenario::{Scenario, TriggerDto};
use trustfabric_sim::world::run;
use trustfabric_sim::{builtin_scenario, builtin_scenarios};

/// Criterion 1: the layered-defense bound holds empirically. The headline
/// cell (epsilon 0.5, three layers at 0.9) over 1e5 trials, plus the 3x3
/// (epsilon x layer-count) grid.
#[test]
fn criterion_1_layered_defense_bound() {
    let headline = monte_carlo(42, 100_000, 0.5, &[0.9, 0.9, 0.9]).unwrap();
    assert!((headline.bound - 0.0005).abs() < 1e-12);
    assert!(
        headline.rate <= headline.bound + 3.0 * headline.stderr,
        "rate {} exceeds bound {} + 3se",
        headline.rate,
        headline.bound
    );
    let grid = defense_grid(42, 100_000).unwrap();
    for cell in &grid {
        assert!(
            cell.within_bound,
            "grid cell epsilon={} k={} rate {} bound {}",
            cell.epsilon,
            cell.detections.len(),
            cell.rate,
            cell.bound
        );
    }
    // Undefended sanity anchor: the empirical rate matches the phase
    // product itself within three standard errors.
    let undefended = monte_carlo(42, 100_000, 0.6, &[]).unwrap();
    assert!(
        (undefended.rate - 0.6).abs() <= 3.0 * undefended.stderr,
        "undefended rate {} vs 0.6",
        undefended.rate
    );
    println!(
        "[PASS] criterion 1: headline rate {:.6} <= bound 0.0005 + 3se; all {} grid cells within bound; \
         undefended rate {:.4} matches 0.6",
        headline.rate,
        grid.len(),
        undefended.rate
    );
}

/// Criterion 2: composite trust converges under stationary event streams
/// for a 12-point (lambda, weights) grid: |delta| < 1e-6 within 1000 steps.
#[test]
fn criterion_2_trust_convergence() {
    let lambdas = [0.02, 0.05, 0.1, 0.2];
    let weight_sets = [
        (0.25, 0.25, 0.25, 0.25),
        (0.4, 0.2, 0.2, 0.2),
        (0.1, 0.2, 0.4, 0.3),
    ];
    let keys = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for &lambda in &lambdas {
        for &(a, b, g, d) in &weight_sets {
            let weights = TrustWeights::new(a, b, g, d).unwrap();
            let config = TrustConfig { decay_lambda: lambda, ..TrustConfig::default() };
            let agent = generate_did(&mut DetRng::for_site(2, "conv", 0), 128).unwrap();
            let mut state = TrustState::new(agent, &config);
            let events = vec![TrustEvent::Action(trustfabric_core::trust::ActionSample {
                action: "routine".into(),
                expected: "routine".into(),
                similarity: 0.9,
                compliant: true,
            })];
            let mut last_delta = f64::INFINITY;
            for _ in 0..1000 {
                let next = step(&state, &weights, &config, state.last_update + 1, &events, &keys).unwrap();
                last_delta = (next.composite - state.composite).abs();
                state = next;
            }
            assert!(
                last_delta < 1e-6,
                "no convergence for lambda={lambda} weights=({a},{b},{g},{d}): delta {last_delta}"
            );
            worst = worst.max(last_delta);
        }
    }
    println!("[PASS] criterion 2: 12 configurations converged; worst final |delta| = {worst:.3e}");
}

/// Criterion 3: one million 128-bit DIDs, zero collisions.
#[test]
fn criterion_3_did_collisions() {
    let start = std::time::Instant::now();
    let mut rng = DetRng::for_site(3, "did-collisions", 0);
    let mut seen: HashSet<[u8; 16]> = HashSet::with_capacity(1_000_000);
    for _ in 0..1_000_000u32 {
        let did = generate_did(&mut rng, 128).unwrap();
        let mut key = [0u8; 16];
        key.copy_from_slice(did.id_bytes());
        assert!(seen.insert(key), "collision detected");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!("[PASS] criterion 3: 1e6 DIDs, 0 collisions in {elapsed:?}");
}

/// Criterion 4: the canonical meeting-attack scenario. Undefended, the
/// attack reaches the evasion phase and leaves a clean audit log. With
/// causal auditing, the data-flow detector flags the chain in 100/100
/// seeded runs and quarantines the payload. The defended default
/// configuration achieves the metric targets over 1000 seeded runs.
#[test]
fn criterion_4_canonical_scenario() {
    // Part A: undefended.
    let undefended = builtin_scenario("meeting_attack").unwrap();
    let outcome = run(&undefended, None).unwrap();
    let attack = &outcome.report.attacks[0];
    assert_eq!(attack.final_phase, "complete");
    assert!(
        attack.transitions.iter().any(|t| t.contains("q4->q5")),
        "attack must pass through the evasion phase: {:?}",
        attack.transitions
    );
    assert!(
        !outcome.audit_export.contains("tool_call:schedule_meeting"),
        "sanitized audit log must look clean"
    );
    assert!(outcome.report.trust_impact > 0.0);

    // Part B: causal auditing on, 100 seeds.
    let audited = builtin_scenario("meeting_attack_audited").unwrap();
    for seed in 0..100u64 {
        let outcome = run(&audited, Some(seed)).unwrap();
        assert!(
            outcome
                .report
                .flags
                .iter()
                .any(|f| f.detector == Detector::UnauthorizedDataFlow),
            "seed {seed}: data-flow detector missed the chain"
        );
        assert!(outcome.report.quarantined_entries >= 1, "seed {seed}: no quarantine");
        assert_eq!(outcome.report.trigger_evasion_rate, 0.0, "seed {seed}");
        assert!(outcome.report.persistence_depth <= 1, "seed {seed}");
        assert!(
            outcome.report.trust_impact > 0.01 && outcome.report.trust_impact <= 0.15,
            "seed {seed}: trust impact {} outside (0.01, 0.15]",
            outcome.report.trust_impact
        );
    }

    // Part C: defended default (every layer on), 1000 seeds, Table-4 style
    // targets.
    let defended = builtin_scenario("meeting_attack_full_defense").unwrap();
    let mut max_persistence = 0u64;
    let mut max_impact: f64 = 0.0;
    let mut evasion_sum = 0.0;
    for seed in 0..1000u64 {
        let outcome = run(&defended, Some(seed)).unwrap();
        max_persistence = max_persistence.max(outcome.report.persistence_depth);
        max_impact = max_impact.max(outcome.report.trust_impact);
        evasion_sum += outcome.report.trigger_evasion_rate;
    }
    let mean_evasion = evasion_sum / 1000.0;
    assert!(max_persistence <= 1, "persistence {max_persistence} exceeds one session");
    assert!(mean_evasion < 0.05, "mean evasion {mean_evasion}");
    assert!(max_impact <= 0.15, "max trust impact {max_impact}");
    println!(
        "[PASS] criterion 4: undefended q5 + clean log; 100/100 audited runs flagged and quarantined; \
         defended targets: persistence<= {max_persistence}, evasion {mean_evasion:.4}, dT <= {max_impact:.4}"
    );
}

/// Criterion 5: just-in-time environments deny persistence across 1000
/// randomized attack scenarios.
#[test]
fn criterion_5_jit_anti_persistence() {
    let base = builtin_scenario("jit_containment").unwrap();
    for trial in 0..1000u64 {
        let mut scenario = base.clone();
        let mut rng = DetRng::for_site(5, "jit-random", trial);
        let attack = &mut scenario.attacks[0];
        attack.start_tick = rng.range(0, 8);
        attack.stealth = 1.0;
        attack.one_shot = rng.chance(0.5);
        attack.trigger = match rng.range(0, 3) {
            0 => TriggerDto::PhraseMatch {
                phrase: "John Doe needs a sync-up".into(),
                threshold: 0.5 + rng.next_f64() * 0.4,
            },
            1 => TriggerDto::TimeDelayed { delay: rng.range(0, 6) },
            _ => TriggerDto::ContextEvent { label: format!("event{}", rng.range(0, 3)) },
        };
        let outcome = run(&scenario, Some(trial)).unwrap();
        assert_eq!(
            outcome.report.persistence_depth, 0,
            "trial {trial}: payload survived a session boundary under jit"
        );
        assert_eq!(outcome.report.success_rate, 0.0, "trial {trial}");
    }
    println!("[PASS] criterion 5: persistence depth 0 in 1000/1000 randomized jit scenarios");
}

/// Criterion 6: closed-form exactness for every formula the fabric
/// computes, on randomized grids, at 1e-9.
#[test]
fn criterion_6_formula_exactness() {
    let mut rng = DetRng::for_site(6, "formulas", 0);
    let did = generate_did(&mut rng, 128).unwrap();

    // Composite trust.
    for _ in 0..1000 {
        let (b, r, h, c) = (rng.next_f64(), rng.next_f64(), rng.next_f64(), rng.next_f64());
        let a = rng.next_f64();
        let beta = (1.0 - a) * rng.next_f64();
        let g = (1.0 - a - beta) * rng.next_f64();
        let d = 1.0 - a - beta - g;
        let weights = TrustWeights::new(a, beta, g, d).unwrap();
        let mut state = TrustState::new(did.clone(), &TrustConfig::default());
        state.behavioral = b;
        state.reputation = r;
        state.historical = h;
        state.compliance = c;
        let expected = a * b + beta * r + g * h + d * c;
        assert!((composite_trust(&state, &weights) - expected).abs() < 1e-9);
    }

    // Exponential decay.
    for _ in 0..1000 {
        let s = rng.next_f64();
        let lambda = rng.next_f64() * 0.5;
        let dt = rng.range(0, 200);
        let expected = s * (-lambda * dt as f64).exp();
        assert!((decay(s, lambda, dt).unwrap() - expected).abs() < 1e-9);
    }

    // Containment level over a 1e3 grid.
    let policy = ContainmentPolicy::new(1.0, 10.0, ContainmentPolicy::default_policy().bands).unwrap();
    for i in 0..=1000 {
        let trust = i as f64 / 1000.0;
        let expected = 10.0 * (1.0 - trust) + 1.0;
        assert!((containment_level(trust, &policy).unwrap() - expected).abs() < 1e-9);
    }

    // Success probability product and the defense bound.
    for _ in 0..1000 {
        let p = PhaseProbabilities {
            inject: rng.next_f64(),
            persist: rng.next_f64(),
            trigger: rng.next_f64(),
            execute: rng.next_f64(),
            evade: rng.next_f64(),
        };
        let expected = p.inject * p.persist * p.trigger * p.execute * p.evade;
        assert!((success_probability(&p).unwrap() - expected).abs() < 1e-9);

        let epsilon = rng.next_f64();
        let detections: Vec<f64> = (0..rng.range(0, 5)).map(|_| rng.next_f64()).collect();
        let expected = detections.iter().fold(epsilon, |acc, d| acc * (1.0 - d));
        assert!((layered_defense_bound(epsilon, &detections).unwrap() - expected).abs() < 1e-9);
    }

    // Threat surface products and sum.
    for _ in 0..200 {
        let agents: Vec<AgentSurface> = (0..rng.range(1, 6))
            .map(|i| AgentSurface {
                agent: generate_did(&mut DetRng::for_site(6, "surface", i), 128).unwrap(),
                capabilities: rng.range(0, 10),
                interactions: rng.range(0, 10),
                complexity: rng.next_f64() * 4.0,
                memory_persistence: rng.next_f64() * 2.0,
            })
            .collect();
        let surface = threat_surface(&agents).unwrap();
        let mut expected_total = 0.0;
        for (agent, theta) in agents.iter().zip(&surface.per_agent) {
            let expected = agent.capabilities as f64
                * agent.interactions as f64
                * agent.complexity
                * agent.memory_persistence;
            assert!((theta.1 - expected).abs() < 1e-9);
            expected_total += expected;
        }
        assert!((surface.total - expected_total).abs() < 1e-9);
    }

    // Deviation norm.
    for _ in 0..1000 {
        let mut current = [0.0; FINGERPRINT_DIM];
        let mut baseline = [0.0; FINGERPRINT_DIM];
        for i in 0..FINGERPRINT_DIM {
            current[i] = rng.next_f64();
            baseline[i] = rng.next_f64();
        }
        let mut state = AttestationState::with_defaults(BehavioralFingerprint::from_vec(&baseline));
        state.current = BehavioralFingerprint::from_vec(&current);
        let expected = current
            .iter()
            .zip(&baseline)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((deviation(&state) - expected).abs() < 1e-9);
    }

    println!("[PASS] criterion 6: all formulas match closed forms to 1e-9 on randomized grids");
}

/// Criterion 7: parser suites. Name round-trips, policy grammar on the
/// canonical examples, fuzz totality, and the strict trust threshold.
#[test]
fn criterion_7_parsers() {
    // Canonical name plus 1e4 generated round-trips.
    let canonical = "a2a://textProcessor.DocumentTranslation.AcmeCorp.v2.1.hipaa";
    let parsed = AnsName::parse(canonical).unwrap();
    assert_eq!(parsed.to_string(), canonical);

    let mut rng = DetRng::for_site(7, "names", 0);
    let label = |rng: &mut DetRng| -> String {
        let len = rng.range(1, 10);
        (0..len)
            .map(|_| char::from(b'a' + (rng.range(0, 26) as u8)))
            .collect()
    };
    for _ in 0..10_000 {
        let version = if rng.chance(0.5) {
            format!("v{}.{}", rng.range(0, 10), rng.range(0, 10))
        } else {
            format!("v{}", rng.range(0, 100))
        };
        let name = AnsName {
            protocol: label(&mut rng),
            capability: label(&mut rng),
            domain: label(&mut rng),
            organization: label(&mut rng),
            version,
            compliance: label(&mut rng),
        };
        let reparsed = AnsName::parse(&name.to_string()).unwrap();
        assert_eq!(reparsed, name);
    }

    // Both policy examples parse verbatim.
    let grant = "GRANT access TO capability:document_processing \
                 IF agent.trust_score > 0.8 \
                 AND agent.has_credential(\"data_processing_certified\") \
                 AND current_time WITHIN agent.authorized_hours \
                 AND request.data_classification <= agent.clearance_level";
    let require = "IF speaker = \"external_user\" AND tool_call = \"schedule_meeting()\" \
                   THEN require_2FA = TRUE";
    let rules = parse_policy(&format!("{grant}\n{require}")).unwrap();
    assert_eq!(rules.len(), 2);

    // Fuzz totality: random byte blobs up to 64 KiB never panic.
    let mut fuzz_rng = DetRng::for_site(7, "policy-fuzz", 0);
    for len in [0usize, 13, 255, 4096, 65_536] {
        for _ in 0..8 {
            let mut bytes = vec![0u8; len];
            fuzz_rng.fill_bytes(&mut bytes);
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_policy(&text);
        }
    }
    // Structured garbage too.
    for _ in 0..200 {
        let fragments = ["GRANT", "IF", "AND", "OR", "(", ")", "agent.trust_score", ">", "0.8", "\"x", "THEN"];
        let text: String = (0..fuzz_rng.range(0, 40))
            .map(|_| fragments[fuzz_rng.range(0, fragments.len() as u64) as usize])
            .collect::<Vec<_>>()
            .join(" ");
        let _ = parse_policy(&text);
    }

    // Strict threshold: grant at 0.81, deny at 0.80.
    let mut auth_rng = DetRng::for_site(7, "authz", 0);
    let issuer_keys = generate_keypair(&mut auth_rng);
    let issuer = generate_did(&mut auth_rng, 128).unwrap();
    let subject = generate_did(&mut auth_rng, 128).unwrap();
    let vc = issue_credential(
        &issuer_keys,
        &issuer,
        &subject,
        [("data_processing_certified".to_string(), "true".to_string())].into(),
        (0, 100),
    )
    .unwrap();
    let issuer_map: BTreeMap<Did, Vec<u8>> = [(issuer, issuer_keys.public_key)].into();
    let revoked = BTreeSet::new();
    let env = AuthEnv { issuer_keys: &issuer_map, revoked_credentials: &revoked, day_length: 24 };
    let request = AccessRequest {
        subject,
        capability: "document_processing".into(),
        tool_call: None,
        speaker: "internal".into(),
        data_classification: 2,
        clearance_level: 3,
        now: 10,
        authorized_hours: Some((8, 18)),
        presented_credentials: vec![vc],
    };
    let rules = parse_policy(grant).unwrap();
    assert_eq!(authorize(&rules, &request, 0.81, true, &env).outcome, Outcome::Grant);
    assert_eq!(authorize(&rules, &request, 0.80, true, &env).outcome, Outcome::Deny);

    println!("[PASS] criterion 7: name round-trips (1e4), policy examples parse, fuzz total, 0.81/0.80 boundary");
}

/// Criterion 8: every single-entry tamper in stores of size <= 12 is
/// detected at the correct index, and quarantine restores chain validity.
#[test]
fn criterion_8_integrity_exhaustive() {
    let agent = generate_did(&mut DetRng::for_site(8, "victim", 0), 128).unwrap();
    let build = |n: usize| -> MemoryStore {
        let mut store = MemoryStore::new(agent.clone(), 4);
        for i in 0..n {
            store
                .append(
                    format!("entry {i}"),
                    MemorySource::External(format!("src{i}")),
                    0.5,
                    vec![0.25; 4],
                    Tier::LongTerm,
                    i as u64,
                )
                .unwrap();
        }
        store
    };

    let mut cases = 0u64;
    for n in 1..=12usize {
        for idx in 0..n {
            // Field mutations.
            for field in 0..4 {
                let mut store = build(n);
                match field {
                    0 => store.long_term[idx].content.push('!'),
                    1 => store.long_term[idx].timestamp += 1,
                    2 => store.long_term[idx].source = MemorySource::External("swapped".into()),
                    _ => store.long_term[idx].prev_hash[0] ^= 1,
                }
                assert_eq!(
                    store.verify_integrity(),
                    IntegrityStatus::BrokenAt(idx),
                    "mutation field {field} at {idx} in store of {n}"
                );
                cases += 1;
            }
            // Deletion.
            let mut store = build(n);
            store.long_term.remove(idx);
            assert_eq!(store.verify_integrity(), IntegrityStatus::BrokenAt(idx));
            cases += 1;

            // Quarantine from this index restores validity and hides the
            // tail from retrieval.
            let mut store = build(n);
            let removed = store.quarantine_from(idx).unwrap();
            assert_eq!(removed, n - idx);
            assert_eq!(store.verify_integrity(), IntegrityStatus::Ok);
            if idx == 0 {
                assert_eq!(store.chain_head, genesis_hash());
            }
            for hit in store.retrieve(&[0.25; 4], n + 1).unwrap() {
                assert!(!hit.revoked);
            }
            cases += 1;
        }
        // Reorders (adjacent swaps).
        for idx in 0..n.saturating_sub(1) {
            let mut store = build(n);
            store.long_term.swap(idx, idx + 1);
            assert_eq!(store.verify_integrity(), IntegrityStatus::BrokenAt(idx));
            cases += 1;
        }
    }
    println!("[PASS] criterion 8: {cases} exhaustive tamper cases detected at exact indices");
}

/// Criterion 9: equal seeds give byte-identical reports and audit exports
/// for every shipped scenario.
#[test]
fn criterion_9_determinism() {
    let mut checked = 0;
    for (name, _) in builtin_scenarios() {
        let scenario = builtin_scenario(name).unwrap();
        let a = run(&scenario, None).unwrap();
        let b = run(&scenario, None).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json(), "report bytes differ for {name}");
        assert_eq!(a.audit_export, b.audit_export, "audit bytes differ for {name}");
        // And a seed override still replays identically.
        let c = run(&scenario, Some(777)).unwrap();
        let d = run(&scenario, Some(777)).unwrap();
        assert_eq!(c.report.to_json(), d.report.to_json());
        assert_eq!(c.audit_export, d.audit_export);
        checked += 1;
    }
    println!("[PASS] criterion 9: {checked} shipped scenarios byte-identical across replays");
}

/// The scenario compiler in criterion 5 needs a valid mutable base; keep the
/// shipped files loadable as a standing guarantee.
#[test]
fn shipped_scenarios_validate() {
    for (name, text) in builtin_scenarios() {
        let scenario = Scenario::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&scenario.name, name);
    }
}
