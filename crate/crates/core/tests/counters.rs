use pim_collectives::codec::{ElementType, ReduceOp};
use pim_collectives::collectives::{run_request, CollectiveError, CommRequest, FlagPreset, Primitive, TechniqueFlags};
use pim_collectives::harness::{prepare, run_prepared, run_seeded, HarnessError};
use pim_collectives::hypercube::HypercubeConfig;
use pim_collectives::machine::{CostCounters, PimMachine};
use pim_collectives::topology::{PeId, Topology};

fn cube(dims: &[usize], ch: usize, r: usize) -> HypercubeConfig {
    HypercubeConfig::new(dims, Topology::new(ch, r).unwrap()).unwrap()
}

fn counters(hc: &HypercubeConfig, p: Primitive, dtype: ElementType, mask: &str, bytes: usize, flags: TechniqueFlags) -> CostCounters {
    let req = CommRequest::new(p, dtype, hc.parse_mask(mask).unwrap(), bytes)
        .with_op(ReduceOp::Sum)
        .with_flags(flags);
    run_seeded(hc, &req, 9, true).unwrap().report.counters
}

#[test]
fn technique_applicability_predicates() {
    let hc = cube(&[8, 8], 1, 1);
    for p in Primitive::ALL {
        for dtype in ElementType::ALL {
            for mask in ["10", "01", "11"] {
                for preset in FlagPreset::ABLATION {
                    let flags = preset.resolve(p, dtype);
                    let c = counters(&hc, p, dtype, mask, 512, flags);
                    let ctx = format!("{p} {dtype} {mask} {flags}: {c:?}");
                    if flags.pr {
                        assert!(c.pe_moved_bytes > 0, "{ctx}");
                    }
                    if flags.im {
                        assert_eq!(c.host_staged_bytes, 0, "{ctx}");
                    }
                    if flags.is_baseline() && p != Primitive::Broadcast {
                        assert!(c.host_staged_bytes > 0, "{ctx}");
                    }
                    if flags.cm {
                        assert_eq!(c.dt_blocks, 0, "{ctx}");
                    }
                    let cm_reduction = matches!(p, Primitive::ReduceScatter | Primitive::AllReduce | Primitive::Reduce);
                    if preset == FlagPreset::Full && cm_reduction && dtype != ElementType::U8 {
                        assert!(c.dt_blocks > 0, "{ctx}");
                    }
                    if p == Primitive::Broadcast {
                        assert_eq!(
                            (c.host_rot_ops, c.pe_moved_bytes, c.host_staged_bytes, c.kernel_launches),
                            (0, 0, 0, 0),
                            "{ctx}"
                        );
                    }
                    assert_eq!(c.bus_bytes % 64, 0);
                }
            }
        }
    }
}

#[test]
fn ablation_strictly_decreases_host_work() {
    let hc = cube(&[32, 32], 4, 4);
    for p in Primitive::INTER_PE {
        for mask in ["10", "01", "11"] {
            let g = hc.group_size(&hc.parse_mask(mask).unwrap());
            // AllGather grows each buffer G-fold; keep the output at 8 KiB.
            let bytes = if p == Primitive::AllGather { 8192 / g } else { 8192 };
            let work: Vec<u64> = FlagPreset::ABLATION
                .iter()
                .map(|preset| counters(&hc, p, ElementType::U32, mask, bytes, preset.resolve(p, ElementType::U32)).host_work())
                .collect();
            assert!(work[0] > work[1] && work[1] > work[2], "{p} {mask}: {work:?}");
            if matches!(p, Primitive::AlltoAll | Primitive::AllGather) {
                assert!(work[2] > work[3], "{p} {mask}: {work:?}");
            } else {
                assert_eq!(work[2], work[3], "{p} {mask}: {work:?}");
            }
        }
    }
}

#[test]
fn u8_reductions_lose_their_domain_transfers() {
    let hc = cube(&[8, 8], 1, 1);
    for p in [Primitive::ReduceScatter, Primitive::AllReduce, Primitive::Reduce] {
        let im = counters(&hc, p, ElementType::U8, "11", 512, TechniqueFlags::new(true, true, false));
        let cm = counters(&hc, p, ElementType::U8, "11", 512, TechniqueFlags::new(true, true, true));
        assert!(im.dt_blocks > 0 && cm.dt_blocks == 0);
        assert!(cm.host_work() < im.host_work(), "{p}");
    }
}

#[test]
fn fused_all_reduce_uses_less_bus_than_reduce_scatter_plus_all_gather() {
    let shapes: &[(&[usize], &str, usize, usize)] = &[
        (&[8, 8], "10", 1, 1),
        (&[8, 8], "01", 1, 1),
        (&[8, 8], "11", 1, 1),
        (&[4, 2, 4], "100", 1, 1),
        (&[4, 2, 4], "101", 1, 1),
        (&[16, 16], "10", 2, 2),
        (&[16, 16], "01", 2, 2),
        (&[16, 16], "11", 2, 2),
        (&[2, 12], "01", 1, 1),
        (&[32, 32], "10", 4, 4),
    ];
    for &(dims, mask, ch, r) in shapes {
        let hc = cube(dims, ch, r);
        let g = hc.group_size(&hc.parse_mask(mask).unwrap());
        let bytes = 8 * g * 4;
        for preset in FlagPreset::ABLATION {
            let flags = |p| preset.resolve(p, ElementType::U16);
            let ar = counters(&hc, Primitive::AllReduce, ElementType::U16, mask, bytes, flags(Primitive::AllReduce));
            let rs = counters(&hc, Primitive::ReduceScatter, ElementType::U16, mask, bytes, flags(Primitive::ReduceScatter));
            let ag = counters(&hc, Primitive::AllGather, ElementType::U16, mask, bytes / g, flags(Primitive::AllGather));
            assert!(
                ar.bus_bytes < rs.bus_bytes + ag.bus_bytes,
                "{dims:?} {mask} {preset}: {} vs {} + {}",
                ar.bus_bytes,
                rs.bus_bytes,
                ag.bus_bytes
            );
        }
    }
}

#[test]
fn bus_bytes_count_whole_bursts() {
    let hc = cube(&[8, 8], 1, 1);
    let c = counters(&hc, Primitive::AlltoAll, ElementType::U8, "11", 512, TechniqueFlags::new(true, true, true));
    // Every burst of every PE is read once and written once.
    assert_eq!(c.bus_bytes, 2 * 64 * 512);
}

#[test]
fn groups_are_independent() {
    // Running all groups at once leaves each group exactly as running a
    // cube that contains only that group's data would; checked by making
    // every other group's data constant and comparing group 0's result.
    let hc = cube(&[8, 8], 1, 1);
    let mask = hc.parse_mask("01").unwrap();
    let groups = hc.slice_groups(&mask);
    for p in Primitive::INTER_PE {
        let req = CommRequest::new(p, ElementType::U32, mask.clone(), 256)
            .with_op(ReduceOp::Max)
            .with_flags(FlagPreset::Full.resolve(p, ElementType::U32));
        let mut a = PimMachine::new(*hc.topology());
        let inputs = prepare(&mut a, &hc, &req, 5).unwrap();
        let mut b = PimMachine::new(*hc.topology());
        for pe in 0..64 {
            let mine = groups[0].members.contains(&PeId(pe));
            let data = if mine { inputs.pe_inputs[pe].clone() } else { vec![0xa5; 256] };
            b.load_mram(PeId(pe), 0, &data).unwrap();
        }
        run_request(&mut a, &hc, &req, None).unwrap();
        run_request(&mut b, &hc, &req, None).unwrap();
        for pe in &groups[0].members {
            assert_eq!(a.mram(*pe), b.mram(*pe), "{p}");
        }
    }
}

#[test]
fn cross_dimension_alltoall_needs_no_domain_transfer() {
    let hc = cube(&[8, 8, 4], 2, 2);
    for mask in ["010", "001", "011"] {
        let c = counters(&hc, Primitive::AlltoAll, ElementType::U64, mask, 8 * 64, TechniqueFlags::new(true, true, true));
        assert_eq!(c.dt_blocks, 0);
        assert_eq!(c.host_staged_bytes, 0);
    }
}

#[test]
fn flags_change_counters_not_results() {
    let hc = cube(&[4, 2, 4], 1, 1);
    let mask = hc.parse_mask("101").unwrap();
    let mut images = Vec::new();
    for preset in FlagPreset::ABLATION {
        let req = CommRequest::new(Primitive::AlltoAll, ElementType::U8, mask.clone(), 256)
            .with_flags(preset.resolve(Primitive::AlltoAll, ElementType::U8));
        let mut m = PimMachine::new(*hc.topology());
        let inputs = prepare(&mut m, &hc, &req, 3).unwrap();
        let out = run_prepared(&mut m, &hc, &req, &inputs, true).unwrap();
        images.push(((0..32).map(|p| m.mram(PeId(p)).to_vec()).collect::<Vec<_>>(), out.report.counters));
    }
    for w in images.windows(2) {
        assert_eq!(w[0].0, w[1].0);
        assert_ne!(w[0].1, w[1].1);
    }
}

#[test]
fn self_check_catches_a_wrong_result() {
    let hc = cube(&[8, 8], 1, 1);
    let req = CommRequest::new(Primitive::AlltoAll, ElementType::U8, hc.parse_mask("10").unwrap(), 64);
    let mut m = PimMachine::new(*hc.topology());
    let mut inputs = prepare(&mut m, &hc, &req, 1).unwrap();
    inputs.pe_inputs[3][5] ^= 1;
    assert!(matches!(run_prepared(&mut m, &hc, &req, &inputs, true), Err(HarnessError::Mismatch(_))));
}

#[test]
fn report_delta_on_reset_machine_equals_snapshot() {
    let hc = cube(&[8, 8], 1, 1);
    let req = CommRequest::new(Primitive::AllGather, ElementType::U8, hc.parse_mask("11").unwrap(), 8)
        .with_flags(FlagPreset::Full.resolve(Primitive::AllGather, ElementType::U8));
    let mut m = PimMachine::new(*hc.topology());
    let inputs = prepare(&mut m, &hc, &req, 1).unwrap();
    let out = run_prepared(&mut m, &hc, &req, &inputs, true).unwrap();
    assert_eq!(out.report.counters, m.snapshot_counters());
    assert_eq!(out.report.counters.dt_blocks, 0);
}

#[test]
fn constraint_violations() {
    let hc = cube(&[8, 8], 1, 1);
    let mask = hc.parse_mask("10").unwrap();
    let run = |req: CommRequest| run_seeded(&hc, &req, 1, false).map(|_| ()).unwrap_err();
    let base = CommRequest::new(Primitive::AlltoAll, ElementType::U8, mask.clone(), 64);

    let e = run(CommRequest { bytes_per_pe: 12, ..base.clone() });
    assert!(matches!(e, HarnessError::Collective(CollectiveError::NotChunkAligned { bytes: 12 })));
    let e = run(CommRequest { bytes_per_pe: 32, ..base.clone() });
    assert!(matches!(e, HarnessError::Collective(CollectiveError::NotGroupAligned { required: 64, .. })));
    let e = run(base.clone().with_flags(TechniqueFlags::new(false, true, false)));
    assert!(matches!(e, HarnessError::Collective(CollectiveError::IllegalFlags { .. })));
    let e = run(base.clone().with_flags(TechniqueFlags::new(true, false, true)));
    assert!(matches!(e, HarnessError::Collective(CollectiveError::IllegalFlags { .. })));
    let e = run(base.clone().with_base_offset(4));
    assert!(matches!(e, HarnessError::Collective(CollectiveError::BaseMisaligned { offset: 4 })));
    let rs = CommRequest::new(Primitive::ReduceScatter, ElementType::U32, mask.clone(), 64)
        .with_op(ReduceOp::Sum)
        .with_flags(TechniqueFlags::new(true, true, true));
    assert!(matches!(run(rs), HarnessError::Collective(CollectiveError::IllegalFlags { .. })));
    let rs = CommRequest::new(Primitive::ReduceScatter, ElementType::U32, mask.clone(), 64);
    assert!(matches!(run(rs), HarnessError::Collective(CollectiveError::MissingOp(_))));
    let br = CommRequest::new(Primitive::Broadcast, ElementType::U8, mask.clone(), 64)
        .with_flags(TechniqueFlags::new(false, true, false));
    assert!(matches!(run(br), HarnessError::Collective(CollectiveError::IllegalFlags { .. })));

    // Strict mode rejects groups below one entangled group.
    let small = cube(&[4, 2, 8], 1, 1).with_strict_groups(true);
    let req = CommRequest::new(Primitive::AlltoAll, ElementType::U8, small.parse_mask("100").unwrap(), 64);
    assert!(matches!(
        run_seeded(&small, &req, 1, false),
        Err(HarnessError::Collective(CollectiveError::Hypercube(_)))
    ));
    let req = CommRequest::new(Primitive::AlltoAll, ElementType::U8, small.parse_mask("110").unwrap(), 64);
    assert!(run_seeded(&small, &req, 1, true).is_ok());
}

#[test]
fn rooted_input_checks() {
    let hc = cube(&[8, 8], 1, 1);
    let mask = hc.parse_mask("10").unwrap();
    let req = CommRequest::new(Primitive::Scatter, ElementType::U8, mask.clone(), 64);
    let mut m = PimMachine::new(*hc.topology());
    assert!(matches!(
        run_request(&mut m, &hc, &req, None),
        Err(CollectiveError::MissingHostBuffers(_))
    ));
    let bufs = vec![vec![0u8; 64]; 7];
    assert!(matches!(
        run_request(&mut m, &hc, &req, Some(&bufs)),
        Err(CollectiveError::BufferCountMismatch { expected: 8, got: 7 })
    ));
    let mut bufs = vec![vec![0u8; 64]; 8];
    bufs[2].push(0);
    assert!(matches!(
        run_request(&mut m, &hc, &req, Some(&bufs)),
        Err(CollectiveError::BufferLength { group: 2, .. })
    ));
    let ga = CommRequest::new(Primitive::Gather, ElementType::U8, mask, 64);
    assert!(matches!(run_request(&mut m, &hc, &ga, None), Err(CollectiveError::ShortInput { .. })));
}

#[test]
fn collectives_only_use_the_counted_codec_facade() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/src/collectives");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let src = std::fs::read_to_string(&path).unwrap();
        for banned in ["domain_transfer(", "rot_word", "rot_lane(", "rot_lane_masked(", "rot_lane_within(", "reduce_host_words("] {
            for (n, line) in src.lines().enumerate() {
                let hit = line.contains(banned) && !line.contains("host_");
                assert!(!hit, "{}:{}: direct codec call `{banned}`", path.display(), n + 1);
            }
        }
    }
}
