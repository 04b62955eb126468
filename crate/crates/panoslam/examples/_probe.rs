use panoslam::imu;
use panoslam::mapper::{Mapper, MapperConfig, SweepDecision};
use panoslam::sweep;

fn main() {
    let window = imu::csv::read_path(std::path::Path::new("/root/scratch/loop/imu.csv")).unwrap();
    let mut sweeps = sweep::read_log_path(std::path::Path::new("/root/scratch/loop/sweeps.bin")).unwrap();
    sweep::attach_imu(&mut sweeps, &window);
    let mut mapper = Mapper::new(MapperConfig::default()).unwrap();
    let t_all = std::time::Instant::now();
    let mut slow = 0;
    for (k, s) in sweeps.iter().take(120).enumerate() {
        let t0 = std::time::Instant::now();
        let r = mapper.process_sweep(s).unwrap();
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        if ms > 150.0 { slow += 1; }
        if k % 15 == 0 || !matches!(r.decision, SweepDecision::Continue) {
            println!(
                "sweep {k}: {:.0}ms q={:.3} dec={:?} kf={} edges={}",
                ms, r.quality, r.decision, r.keyframe_count, r.edge_count
            );
        }
    }
    println!("total for 120: {:.1}s  slow(>150ms)={slow}", t_all.elapsed().as_secs_f64());
}
