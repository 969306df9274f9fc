//! Throwaway layout tuner: uniform-random rollouts on a wall layout.
//! Usage: wallmc <episodes> [seed]

use ice::agent::uniform_random_policy;
use ice::env::{Env, WallGridWorld};
use ice::experiment::DEFAULT_WALL_LAYOUT;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let episodes: usize = args[1].parse().unwrap();
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mut env = WallGridWorld::from_layout(DEFAULT_WALL_LAYOUT, 400).unwrap();
    let unobs = env.unobservable_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut goals = 0usize;
    let mut pocket_entries = 0usize;
    let mut first_goal = None;
    for ep in 0..episodes {
        env.reset();
        let mut entered = false;
        let mut reached = false;
        loop {
            let a = uniform_random_policy(4, &mut rng);
            let t = env.step(a).unwrap();
            if unobs[env.position_index()] {
                entered = true;
            }
            if t.extrinsic_reward > 0.0 {
                reached = true;
            }
            if t.done {
                break;
            }
        }
        goals += reached as usize;
        pocket_entries += entered as usize;
        if reached && first_goal.is_none() {
            first_goal = Some(ep);
        }
    }
    println!(
        "episodes {episodes}  pocket-entry rate {:.4}  goal rate {:.5}  first goal ep {:?}",
        pocket_entries as f64 / episodes as f64,
        goals as f64 / episodes as f64,
        first_goal
    );
}
