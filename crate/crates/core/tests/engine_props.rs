//! Property tests over random shapes for the rank-engine invariants.

use proptest::prelude::*;

use seqpipe_core::{
    multi_head_attention, pipesp_attention, scatter_heads, ulysses_attention, PartitionAxis,
    RankGroup, ShardedTensor, Tensor,
};

fn tensor_from_seed(shape: &[usize], seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    Tensor::from_fn(shape, |_| {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exchange_round_trips_between_axes(
        ranks in 1usize..5,
        heads_per_rank in 1usize..4,
        seq_per_rank in 1usize..4,
        batch in 1usize..3,
        dim in 1usize..4,
        seed in 0u64..1000,
    ) {
        let group = RankGroup::with_schedule_seed(ranks, seed);
        let shape = [batch, ranks * heads_per_rank, ranks * seq_per_rank, dim];
        let logical = tensor_from_seed(&shape, seed);
        let sharded = ShardedTensor::split(&logical, PartitionAxis::Sequence, ranks).unwrap();
        let forward = group.all_to_all(sharded.shards(), 1, 2).unwrap();
        let back = group.all_to_all(&forward, 2, 1).unwrap();
        prop_assert_eq!(back.as_slice(), sharded.shards());
    }

    #[test]
    fn both_paths_match_the_head_loop(
        ranks in 1usize..5,
        heads_per_rank in 1usize..3,
        seq_per_rank in 1usize..4,
        batch in 1usize..3,
        dim in 1usize..4,
        seed in 0u64..1000,
    ) {
        let group = RankGroup::with_schedule_seed(ranks, seed);
        let shape = [batch, ranks * heads_per_rank, ranks * seq_per_rank, dim];
        let q = tensor_from_seed(&shape, seed ^ 1);
        let k = tensor_from_seed(&shape, seed ^ 2);
        let v = tensor_from_seed(&shape, seed ^ 3);
        let split = |t: &Tensor| ShardedTensor::split(t, PartitionAxis::Sequence, ranks).unwrap();

        let oracle = multi_head_attention(&q, &k, &v, None).unwrap();
        let baseline = ulysses_attention(&group, &split(&q), &split(&k), &split(&v), None)
            .unwrap()
            .logical()
            .unwrap();
        prop_assert_eq!(baseline.data(), oracle.data());

        let heads = |t: &Tensor| scatter_heads(&group, &split(t)).unwrap();
        let pipelined = pipesp_attention(&group, &heads(&q), &heads(&k), &heads(&v), None)
            .unwrap()
            .logical()
            .unwrap();
        prop_assert_eq!(pipelined.data(), oracle.data());
    }
}
