//! The two synthetic datasets rendered as ASCII strips and exported as PGM
//! frames: class determines the motion law, the seed only the phase.

use std::fs;

use ndev::data::{synth_dataset, DatasetKind, SyntheticSpec, VideoTensor};
use ndev::error::Result;
use ndev::io::write_pgm;

fn ascii_frame(video: &VideoTensor, t: usize) -> String {
    let ramp = [' ', '.', ':', 'o', '#'];
    let mut out = String::new();
    for y in (0..video.height()).step_by(2) {
        for x in 0..video.width() {
            let v = video.pixel(t, y, x);
            out.push(ramp[((v * 4.0).round() as usize).min(4)]);
        }
        out.push('\n');
    }
    out
}

fn main() -> Result<()> {
    let out_root = std::env::temp_dir().join("ndev_synthetic_videos");
    for kind in [DatasetKind::BouncingBall, DatasetKind::MovingBar] {
        let spec = SyntheticSpec {
            kind,
            num_classes: 2,
            seq_len: 6,
            height: 16,
            width: 16,
            samples_per_class: 2,
            seed: 12,
        };
        let data = synth_dataset(&spec)?;
        println!(
            "{}: {} videos of {} frames, classes 0..{}",
            kind.as_str(),
            data.len(),
            spec.seq_len,
            spec.num_classes - 1
        );

        // One sample per class, first three frames side by side.
        for class in 0..spec.num_classes {
            let idx = (0..data.len()).find(|&i| data.label(i) == class).unwrap();
            let video = data.video(idx);
            println!("class {class} (video {idx}), frames 0-2:");
            let strips: Vec<Vec<String>> =
                (0..3).map(|t| ascii_frame(video, t).lines().map(String::from).collect()).collect();
            for row in 0..strips[0].len() {
                let line: Vec<&str> = strips.iter().map(|s| s[row].as_str()).collect();
                println!("  {}", line.join("   "));
            }

            let dir = out_root.join(format!("{}_class{class}", kind.as_str()));
            fs::create_dir_all(&dir).unwrap();
            for t in 0..video.frames() {
                write_pgm(
                    &dir.join(format!("frame_{t:02}.pgm")),
                    video.frame(t),
                    video.height(),
                    video.width(),
                )?;
            }
        }
    }
    println!("PGM frames under {}", out_root.display());
    Ok(())
}
