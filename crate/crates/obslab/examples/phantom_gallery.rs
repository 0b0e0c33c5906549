//! Renders one sample of every stochastic object model — lumpy background,
//! clustered lumpy background at both scales, and the three signal profiles —
//! writes them as PGM images under `target/example-out/phantom_gallery/`, and
//! prints per-model summary statistics next to their analytic expectations.

use std::error::Error;
use std::fs;
use std::path::Path;

use obslab::child_rng;
use obslab::harness::TaskSpec;
use obslab::phantoms::{render_lumpy, sample_lumpy};

fn main() -> Result<(), Box<dyn Error>> {
    let out = Path::new("target/example-out/phantom_gallery");
    fs::create_dir_all(out)?;
    let mut rng = child_rng(424242, "gallery", 0);

    // Lumpy background: Gaussian lumps at Poisson-many uniform positions.
    let lumpy = TaskSpec::ske_bks_lumpy();
    let model = lumpy.lumpy_model().expect("lumpy task");
    let params = sample_lumpy(&mut rng, model, &lumpy.grid);
    let image = render_lumpy(&params, model, &lumpy.kernel, &lumpy.grid);
    println!("lumpy background ({}x{})", lumpy.grid.width(), lumpy.grid.height());
    println!("  lumps drawn          {}", params.centers.len());
    println!("  mean count           {}", model.mean_count);
    println!("  peak pixel           {:.3}", max_pixel(&image));
    println!("  single-lump peak     {:.3}", model.imaged_peak(&lumpy.kernel));
    write_pgm(&out.join("lumpy_background.pgm"), &image, lumpy.grid.width())?;

    // Its known signal: a Gaussian bump blurred by the system kernel.
    let signal = lumpy.known_signal().expect("known signal");
    println!("  signal peak          {:.4}", max_pixel(&signal));
    write_pgm(&out.join("lumpy_signal.pgm"), &signal, lumpy.grid.width())?;

    // Random signal: orientation, widths, and position drawn from the prior.
    let sks = TaskSpec::sks_bks_lumpy();
    let random_signal = sks.sample_signal(&mut rng);
    println!("random elliptical signal");
    println!("  peak pixel           {:.4}", max_pixel(&random_signal));
    write_pgm(&out.join("random_signal.pgm"), &random_signal, sks.grid.width())?;

    // Clustered lumpy background, desk and full scale. Blobs have
    // exponential profiles with anisotropic support, grouped around
    // Gaussian-scattered cluster centers.
    for (name, task) in [
        ("clb_desk", TaskSpec::ske_bks_clb()),
        ("clb_full", TaskSpec::ske_bks_clb_full()),
    ] {
        let image = task.sample_background(&mut rng);
        let mean = image.iter().sum::<f64>() / image.len() as f64;
        println!("clustered background `{name}` ({}x{})", task.grid.width(), task.grid.height());
        println!("  mean pixel           {:.2}", mean);
        println!("  peak pixel           {:.2}", max_pixel(&image));
        write_pgm(&out.join(format!("{name}.pgm")), &image, task.grid.width())?;

        let signal = task.known_signal().expect("known signal");
        write_pgm(&out.join(format!("{name}_signal.pgm")), &signal, task.grid.width())?;
    }

    // The zero-background task still has the sharpest signal: peak exceeds
    // the blurred lumpy-task signal by an order of magnitude.
    let bke = TaskSpec::ske_bke();
    let bke_signal = bke.known_signal().expect("known signal");
    println!("zero-background signal");
    println!("  peak pixel           {:.4}", max_pixel(&bke_signal));
    write_pgm(&out.join("bke_signal.pgm"), &bke_signal, bke.grid.width())?;

    println!("\nwrote gallery to {}", out.display());
    Ok(())
}

fn max_pixel(image: &[f64]) -> f64 {
    image.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Writes a grayscale image as ASCII PGM, linearly mapped to 0..=255.
fn write_pgm(path: &Path, image: &[f64], width: usize) -> Result<(), Box<dyn Error>> {
    let height = image.len() / width;
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = max_pixel(image);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut text = format!("P2\n{width} {height}\n255\n");
    for row in image.chunks(width) {
        let line: Vec<String> =
            row.iter().map(|&v| format!("{}", ((v - lo) * scale).round() as u8)).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
