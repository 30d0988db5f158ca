use std::sync::Arc;

use imagery_core::agents::{
    Agent, OrbitSearchAgent, OrbitSearchConfig, ResetMatchAgent, VoxelOracleAgent,
};
use imagery_core::dataset::ProblemSet;
use imagery_core::eval::Condition;
use imagery_core::forge::{generate_polycube, ForgeConfig, ForgeConstraints};
use imagery_core::geometry::apply_camera_rotation;
use imagery_core::protocol::{
    format_sequence, parse_turn_output_strict, CommandRequest, Memory, PartialConclusion,
    Verdict,
};
use imagery_core::session::{run_loop, LoopConfig, Session};
use imagery_core::{
    canonical_orientations, parse_sequence, rotation_equivalent, Direction, OptionLabel,
    Polycube, Pose, RotationCommand, Target, Turn, TurnOutput,
};
use proptest::prelude::*;

fn direction() -> impl Strategy<Value = Direction> {
    prop::sample::select(Direction::ALL.to_vec())
}

fn command() -> impl Strategy<Value = RotationCommand> {
    prop_oneof![
        1 => Just(RotationCommand::Reset),
        4 => (direction(), -720.0f64..720.0).prop_map(|(d, a)| RotationCommand::turn(d, a)),
        2 => (direction(), 0u32..360).prop_map(|(d, a)| RotationCommand::turn(d, f64::from(a))),
    ]
}

fn pose() -> impl Strategy<Value = Pose> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| Pose::from_wxyz(w, x, y, z))
}

fn polycube() -> impl Strategy<Value = Polycube> {
    let c = ForgeConstraints {
        max_height: 4,
        max_width: 4,
        max_depth: 4,
        min_cubes: 1,
        max_cubes: 8,
    };
    any::<u64>().prop_map(move |s| generate_polycube(s, &c).expect("box admits 1..8 cubes"))
}

fn rotation_index() -> impl Strategy<Value = usize> {
    0usize..24
}

fn verdict() -> impl Strategy<Value = Verdict> {
    prop::sample::select(vec![
        Verdict::Unknown,
        Verdict::ProbablyNotTheAnswer,
        Verdict::ProbablyTheOddOne,
    ])
}

fn turn_output() -> impl Strategy<Value = TurnOutput> {
    let target = prop::sample::select(vec![Target::A, Target::B, Target::C]);
    let request = (target, prop::collection::vec(command(), 1..6))
        .prop_map(|(t, cmds)| CommandRequest::new(t, &cmds));
    (
        "[ -~]{0,40}",
        (verdict(), verdict(), verdict()),
        1u32..50,
        prop::collection::vec(request, 0..4),
        prop::option::of(prop::sample::select(OptionLabel::ALL.to_vec())),
    )
        .prop_map(|(rationale, (a, b, c), iteration_number, commands, final_answer)| TurnOutput {
            memory: Memory {
                rationale,
                partial_conclusion: PartialConclusion { a, b, c },
            },
            iteration_number,
            commands,
            final_answer,
        })
        .prop_filter("schema needs commands or an answer", |o| {
            !o.commands.is_empty() || o.final_answer.is_some()
        })
}

proptest! {
    #[test]
    fn sequence_text_parses_back(cmds in prop::collection::vec(command(), 1..20)) {
        prop_assert_eq!(parse_sequence(&format_sequence(&cmds)).unwrap(), cmds);
    }

    #[test]
    fn turn_output_parses_back(out in turn_output()) {
        prop_assert_eq!(parse_turn_output_strict(&out.to_fenced()).unwrap(), out.clone());
        let chatty = format!("Thinking it over.\n{}\nDone.", out.to_fenced());
        prop_assert_eq!(parse_turn_output_strict(&chatty).unwrap(), out);
    }

    #[test]
    fn inverse_turn_cancels(p in pose(), d in direction(), a in -720.0f64..720.0) {
        let t = Turn::new(d, a);
        let back = apply_camera_rotation(&apply_camera_rotation(&p, &t), &t.inverse());
        prop_assert!(back.distance(&p) < 1e-9);
    }

    #[test]
    fn pose_json_is_exact(p in pose()) {
        let back: Pose = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        prop_assert_eq!(back.wxyz(), p.wxyz());
    }

    #[test]
    fn cell_text_round_trips(p in polycube()) {
        prop_assert_eq!(Polycube::from_text(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn equivalence_is_an_equivalence(p in polycube(), q in polycube(), i in rotation_index(), j in rotation_index()) {
        let g = canonical_orientations();
        let (pi, pj) = (p.rotated(&g[i]), p.rotated(&g[j]));
        prop_assert!(rotation_equivalent(&p, &p));
        prop_assert!(rotation_equivalent(&pi, &pj));
        prop_assert_eq!(rotation_equivalent(&p, &q), rotation_equivalent(&q, &p));
        prop_assert_eq!(rotation_equivalent(&pi, &q), rotation_equivalent(&p, &q));
        if p.is_chiral() {
            prop_assert!(!rotation_equivalent(&p, &p.mirror()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn scripted_agents_emit_valid_turns(seed in 0u64..10_000) {
        let set = Arc::new(ProblemSet::forge(seed, 1, ForgeConfig::default()).unwrap());
        let agents: Vec<(Box<dyn Agent>, Condition)> = vec![
            (Box::new(VoxelOracleAgent::new(Arc::clone(&set))), Condition::C3Incremental),
            (Box::new(ResetMatchAgent::default()), Condition::C1Reset),
            (Box::new(OrbitSearchAgent::new(OrbitSearchConfig::default())), Condition::C2Hint360),
        ];
        for (agent, condition) in agents {
            let mut cfg = LoopConfig::default();
            condition.apply(&mut cfg);
            let mut s = Session::from_set(&set, "q001", cfg).unwrap();
            let t = run_loop(&mut s, agent.as_ref()).unwrap();
            for it in &t.iterations {
                let parsed = parse_turn_output_strict(&it.raw_output);
                prop_assert!(parsed.is_ok(), "{}: {:?}", agent.name(), parsed);
                prop_assert!(it.errors.is_empty(), "{}: {:?}", agent.name(), it.errors);
            }
            prop_assert_eq!(t.correct, Some(true), "{} on seed {}", agent.name(), seed);
        }
    }
}
