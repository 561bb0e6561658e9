//! Command-line surface of the `ssir` binary.
//!
//! Every subcommand body is an ordinary function taking its parsed
//! argument struct, so integration tests can drive the pipelines without
//! spawning a process. `main` only parses, dispatches, and maps errors to
//! BSD-style exit codes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::audio_io::{
    crop, load_wav, load_wav_with_format, normalize_peak, resample_linear, save_wav, AudioClip,
    WavSampleFormat,
};
use crate::codec::{decode_file, encode_file, Container, ContainerHeader, Weights};
use crate::encoding::{encode_batch, time_grid, PeConfig};
use crate::error::{Error, Result};
use crate::metrics::{add_noise, compression_ratio, evaluate, mse};
use crate::model::{forward, NetConfig};
use crate::quantizer::quantize;
use crate::spectral::{log_mel, noise_estimate, spectral_gate, GateConfig, StftConfig};
use crate::trainer::{train_with_progress, Batch, TrainConfig};

/// Decoder forward passes run over the time grid in slices of this many
/// samples to bound peak memory on long clips.
const DECODE_CHUNK: usize = 65_536;

/// Neural audio codec: overfit a small sine network to a clip and ship its
/// weights.
#[derive(Debug, Parser)]
#[command(name = "ssir", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on a WAV clip and write an .ssir container.
    Compress(CompressArgs),
    /// Reconstruct a WAV clip from an .ssir container.
    Decompress(DecompressArgs),
    /// Compare a reconstruction against its reference recording.
    Eval(EvalArgs),
    /// Render a log-mel spectrogram of a WAV clip to a PGM image.
    Spectrogram(SpectrogramArgs),
    /// Add calibrated noise to a clip and render before/after spectrograms.
    NoiseDemo(NoiseDemoArgs),
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Source WAV file (PCM16 or float32; multichannel is mixed to mono).
    pub input: PathBuf,
    /// Destination .ssir container.
    pub output: PathBuf,
    /// Optimizer iterations.
    #[arg(long, default_value_t = 2500)]
    pub iters: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Decoupled weight decay.
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    /// Sine scale of the first layer.
    #[arg(long, default_value_t = 100.0)]
    pub omega0: f64,
    /// Sine scale of the remaining layers.
    #[arg(long, default_value_t = 100.0)]
    pub omega: f64,
    /// Positional-encoding frequency pairs (0 feeds the raw coordinate).
    #[arg(long, default_value_t = 16)]
    pub pe_levels: usize,
    /// Positional-encoding frequency growth factor.
    #[arg(long, default_value_t = 2.0)]
    pub pe_sigma: f64,
    /// Noise-estimate strength stored for the decoder's gate.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Trunk layout, e.g. "2x256" or "256,256" ("0" for none).
    #[arg(long, default_value = "2x256")]
    pub shared: String,
    /// Per-head layout after the trunk ("0" collapses both heads to one).
    #[arg(long, default_value = "1x128")]
    pub siamese: String,
    /// Train on at most this many seconds from the start (0 = whole clip).
    #[arg(long, default_value_t = 10.0)]
    pub crop_secs: f64,
    /// Peak level the clip is normalized to before training.
    #[arg(long, default_value_t = 0.95)]
    pub peak: f64,
    /// Store float32 weights instead of int8.
    #[arg(long)]
    pub no_quantize: bool,
    /// Seed for weight init and batch shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mini-batch size (0 = full batch).
    #[arg(long, default_value_t = 0)]
    pub batch_size: usize,
    /// Resample the clip to this rate before training.
    #[arg(long)]
    pub resample: Option<u32>,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
}

/// Which reconstruction to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadChoice {
    /// First head alone.
    #[value(name = "0")]
    Zero,
    /// Second head alone.
    #[value(name = "1")]
    One,
    /// Average of both heads.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatChoice {
    Pcm16,
    Float32,
}

impl From<FormatChoice> for WavSampleFormat {
    fn from(f: FormatChoice) -> Self {
        match f {
            FormatChoice::Pcm16 => WavSampleFormat::Pcm16,
            FormatChoice::Float32 => WavSampleFormat::Float32,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    /// Source .ssir container.
    pub input: PathBuf,
    /// Destination WAV file.
    pub output: PathBuf,
    /// Render at this sample rate instead of the trained one.
    #[arg(long)]
    pub rate: Option<u32>,
    /// Reconstruction to emit.
    #[arg(long, value_enum, default_value_t = HeadChoice::Mean)]
    pub head: HeadChoice,
    /// Skip the spectral gate after reconstruction.
    #[arg(long)]
    pub no_denoise: bool,
    /// Output sample encoding.
    #[arg(long, value_enum, default_value_t = FormatChoice::Pcm16)]
    pub format: FormatChoice,
    /// Suppress the summary line.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth WAV file.
    pub reference: PathBuf,
    /// Reconstructed WAV file (resampled to the reference rate if needed).
    pub test: PathBuf,
    /// Also report this container's size over the reference's sample bytes.
    #[arg(long)]
    pub encoded: Option<PathBuf>,
    /// Emit a JSON object instead of a key=value line.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SpectrogramArgs {
    /// Source WAV file.
    pub input: PathBuf,
    /// Destination PGM image (binary, one byte per pixel).
    pub output: PathBuf,
    /// Number of mel bands (image height).
    #[arg(long, default_value_t = 128)]
    pub mels: usize,
}

#[derive(Debug, Args)]
pub struct NoiseDemoArgs {
    /// Source WAV file.
    pub input: PathBuf,
    /// Directory for noisy.wav, clean.pgm, and noisy.pgm.
    pub outdir: PathBuf,
    /// Variance of the added Gaussian noise.
    #[arg(long, default_value_t = 1e-3)]
    pub variance: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of mel bands in the rendered images.
    #[arg(long, default_value_t = 128)]
    pub mels: usize,
}

/// Expands a layer layout string: "2x256" repeats, "256,128" lists, both
/// may be mixed, and "0" (or empty) means no layers.
pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    let t = s.trim();
    if t.is_empty() || t == "0" {
        return Ok(Vec::new());
    }
    let bad = |part: &str| Error::InvalidArg(format!("bad layer layout '{part}'"));
    let mut widths = Vec::new();
    for part in t.split(',') {
        let part = part.trim();
        if let Some((count, width)) = part.split_once(['x', 'X']) {
            let count: usize = count.trim().parse().map_err(|_| bad(part))?;
            let width: usize = width.trim().parse().map_err(|_| bad(part))?;
            if width == 0 {
                return Err(bad(part));
            }
            widths.extend(std::iter::repeat_n(width, count));
        } else {
            let width: usize = part.parse().map_err(|_| bad(part))?;
            if width == 0 {
                return Err(bad(part));
            }
            widths.push(width);
        }
    }
    Ok(widths)
}

/// Maps an error to a BSD sysexits-style process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        // Caller gave us something unusable.
        Error::InvalidArg(_)
        | Error::EmptyBatch
        | Error::LengthMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::NonCola { .. } => 64,
        // Input data is malformed or degenerate.
        Error::WavFormat(_)
        | Error::UnsupportedWavCodec { .. }
        | Error::AllZeroClip
        | Error::AllZeroReference
        | Error::BadMagic
        | Error::UnsupportedVersion(_)
        | Error::TruncatedPayload
        | Error::ContainerFormat(_)
        | Error::ShapeChain { .. } => 65,
        // The computation itself went numerically wrong.
        Error::NonFiniteLoss { .. } | Error::NonFiniteWeight { .. } => 70,
        Error::Io { .. } => 74,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Compress(args) => run_compress(args),
        Command::Decompress(args) => run_decompress(args),
        Command::Eval(args) => run_eval(args),
        Command::Spectrogram(args) => run_spectrogram(args),
        Command::NoiseDemo(args) => run_noise_demo(args),
    }
}

pub fn run_compress(args: &CompressArgs) -> Result<()> {
    let (loaded, source_format) = load_wav_with_format(&args.input)?;
    let resampled = match args.resample {
        Some(rate) => resample_linear(&loaded, rate)?,
        None => loaded,
    };
    let cropped = if args.crop_secs > 0.0 {
        crop(&resampled, args.crop_secs)?
    } else {
        resampled
    };
    let clip = normalize_peak(&cropped, args.peak as f32)?;

    let net_cfg = NetConfig {
        pe: PeConfig {
            l: args.pe_levels,
            sigma: args.pe_sigma as f32,
        },
        shared: parse_widths(&args.shared)?,
        siamese: parse_widths(&args.siamese)?,
        omega0: args.omega0 as f32,
        omega: args.omega as f32,
    };
    let train_cfg = TrainConfig {
        iterations: args.iters,
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        batch: if args.batch_size == 0 {
            Batch::Full
        } else {
            Batch::Size(args.batch_size)
        },
        seed: args.seed,
        ..TrainConfig::default()
    };

    if !args.quiet {
        eprintln!(
            "compressing {} ({} samples at {} Hz, {} parameters)",
            args.input.display(),
            clip.samples.len(),
            clip.sample_rate,
            net_cfg.param_count(),
        );
    }
    let total = args.iters;
    let (params, report) = train_with_progress::<f32>(&clip, &net_cfg, &train_cfg, |it, loss| {
        let shown = it + 1;
        if !args.quiet && (shown % 100 == 0 || shown == total) {
            eprintln!("iter {shown}/{total} loss {loss:.4e}");
        }
    })?;

    let weights = if args.no_quantize {
        Weights::Float(params)
    } else {
        Weights::Quantized(quantize(&params)?)
    };
    let container = Container {
        header: ContainerHeader {
            normalized: true,
            sample_rate: clip.sample_rate,
            num_samples: clip.samples.len() as u64,
            gain: clip.gain,
            alpha: args.alpha as f32,
            cfg: net_cfg,
        },
        weights,
    };
    let written = encode_file(&container, &args.output)?;

    let source_bytes =
        clip.samples.len() as u64 * u64::from(source_format.bytes_per_sample());
    let ratio = compression_ratio(written, source_bytes)?;
    println!(
        "wrote {} ({} bytes, {:.3} of source samples) mse {:.4e}/{:.4e} in {:.1}s",
        args.output.display(),
        written,
        ratio,
        report.final_mse[0],
        report.final_mse[1],
        report.duration.as_secs_f64(),
    );
    Ok(())
}

/// Runs both heads over the full time grid in bounded-size chunks,
/// returning double-precision sample vectors.
fn render_heads(
    params: &crate::model::SiameseParams<f32>,
    cfg: &NetConfig,
    n_out: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let times: Vec<f32> = time_grid(n_out);
    let mut y0 = Vec::with_capacity(n_out);
    let mut y1 = Vec::with_capacity(n_out);
    for chunk in times.chunks(DECODE_CHUNK) {
        let coords = encode_batch(chunk, &cfg.pe);
        let (a, b) = forward(params, cfg, coords.view())?;
        y0.extend(a.iter().map(|&v| f64::from(v)));
        y1.extend(b.iter().map(|&v| f64::from(v)));
    }
    Ok((y0, y1))
}

pub fn run_decompress(args: &DecompressArgs) -> Result<()> {
    let container = decode_file(&args.input)?;
    let header = &container.header;
    let params = match &container.weights {
        Weights::Quantized(q) => q.dequantize(&header.cfg)?,
        Weights::Float(p) => p.clone(),
    };

    let rate = args.rate.unwrap_or(header.sample_rate);
    if rate == 0 {
        return Err(Error::InvalidArg("sample rate must be positive".into()));
    }
    // The grid is resolution-free: rendering at another rate just samples
    // the learned signal more or less densely over the same time span.
    let n_out = if rate == header.sample_rate {
        header.num_samples as usize
    } else {
        (header.num_samples as f64 * f64::from(rate) / f64::from(header.sample_rate)).round()
            as usize
    };
    if n_out == 0 {
        return Err(Error::EmptyBatch);
    }

    let (y0, y1) = render_heads(&params, &header.cfg, n_out)?;
    let selected: Vec<f64> = match args.head {
        HeadChoice::Zero => y0.clone(),
        HeadChoice::One => y1.clone(),
        HeadChoice::Mean => y0.iter().zip(&y1).map(|(a, b)| 0.5 * (a + b)).collect(),
    };

    // Head 1's estimate is the exact negation of head 0's, so both share a
    // magnitude spectrum and the gate's thresholds: one estimate serves
    // whichever reconstruction was chosen.
    let denoised = if args.no_denoise {
        selected
    } else {
        let eps = noise_estimate(&y0, &y1, f64::from(header.alpha))?;
        spectral_gate(
            &selected,
            Some(&eps),
            &StftConfig::default(),
            &GateConfig::default(),
        )?
    };

    let gain = if header.normalized { header.gain } else { 1.0 };
    let samples: Vec<f32> = denoised
        .iter()
        .map(|&v| (v * f64::from(gain)) as f32)
        .collect();
    let clip = AudioClip::new(samples, rate)?;
    save_wav(&clip, &args.output, args.format.into())?;
    if !args.quiet {
        println!(
            "wrote {} ({} samples at {} Hz)",
            args.output.display(),
            n_out,
            rate
        );
    }
    Ok(())
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let (reference, reference_format) = load_wav_with_format(&args.reference)?;
    let test = load_wav(&args.test)?;
    let test = if test.sample_rate != reference.sample_rate {
        resample_linear(&test, reference.sample_rate)?
    } else {
        test
    };

    // Rate conversion can shift the lengths by a sample; compare the overlap.
    let n = reference.samples.len().min(test.samples.len());
    let a: Vec<f64> = reference.samples[..n].iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = test.samples[..n].iter().map(|&v| f64::from(v)).collect();
    let mut result = evaluate(&a, &b, &StftConfig::default())?;

    if let Some(encoded) = &args.encoded {
        let encoded_bytes = std::fs::metadata(encoded)
            .map_err(|e| Error::io(encoded, e))?
            .len();
        let source_bytes = reference.samples.len() as u64
            * u64::from(reference_format.bytes_per_sample());
        result.compression_ratio = Some(compression_ratio(encoded_bytes, source_bytes)?);
    }

    if args.json {
        // Serde renders non-finite floats as null; snr_db is +inf for a
        // bit-exact match.
        println!(
            "{}",
            serde_json::to_string_pretty(&result)
                .expect("metrics always serialize")
        );
    } else {
        let mut line = format!(
            "mse={:.6e} snr_db={:.3} lsd_db={:.4}",
            result.mse, result.snr_db, result.lsd_db
        );
        if let Some(ratio) = result.compression_ratio {
            line.push_str(&format!(" ratio={ratio:.4}"));
        }
        println!("{line}");
    }
    Ok(())
}

/// Maps a log10 mel power matrix to 8-bit pixels: 0 dB (the clip peak) is
/// white, -80 dB and below is black, and the lowest band sits on the
/// bottom row. A constant image (silence) renders black.
fn mel_pixels(lm: &Array2<f64>) -> (usize, usize, Vec<u8>) {
    let (mels, frames) = (lm.nrows(), lm.ncols());
    let max_db = lm.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(10.0 * v));
    let min_db = lm.iter().fold(f64::INFINITY, |m, &v| m.min(10.0 * v));
    let flat = max_db - min_db < 1e-12;
    let mut pixels = vec![0u8; mels * frames];
    if !flat {
        for ((band, frame), &v) in lm.indexed_iter() {
            let rel = 10.0 * v - max_db;
            let unit = ((rel + 80.0) / 80.0).clamp(0.0, 1.0);
            let row = mels - 1 - band;
            pixels[row * frames + frame] = (unit * 255.0).round() as u8;
        }
    }
    (frames, mels, pixels)
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn run_spectrogram(args: &SpectrogramArgs) -> Result<()> {
    let clip = load_wav(&args.input)?;
    let samples: Vec<f64> = clip.samples.iter().map(|&v| f64::from(v)).collect();
    let lm = log_mel(&samples, clip.sample_rate, args.mels, &StftConfig::default())?;
    let (width, height, pixels) = mel_pixels(&lm);
    write_pgm(&args.output, width, height, &pixels)?;
    println!(
        "wrote {} ({}x{}, {} bands x {} frames)",
        args.output.display(),
        width,
        height,
        args.mels,
        width
    );
    Ok(())
}

pub fn run_noise_demo(args: &NoiseDemoArgs) -> Result<()> {
    std::fs::create_dir_all(&args.outdir).map_err(|e| Error::io(&args.outdir, e))?;
    let clip = load_wav(&args.input)?;
    let clean: Vec<f64> = clip.samples.iter().map(|&v| f64::from(v)).collect();
    let noisy = add_noise(&clean, args.variance, args.seed)?;

    let noisy_clip = AudioClip::new(noisy.iter().map(|&v| v as f32).collect(), clip.sample_rate)?;
    // Float32 output: added noise may push samples past full scale, and
    // PCM16 would clip them.
    save_wav(
        &noisy_clip,
        args.outdir.join("noisy.wav"),
        WavSampleFormat::Float32,
    )?;

    let stft_cfg = StftConfig::default();
    let lm_clean = log_mel(&clean, clip.sample_rate, args.mels, &stft_cfg)?;
    let lm_noisy = log_mel(&noisy, clip.sample_rate, args.mels, &stft_cfg)?;
    let (w, h, px_clean) = mel_pixels(&lm_clean);
    let (_, _, px_noisy) = mel_pixels(&lm_noisy);
    write_pgm(&args.outdir.join("clean.pgm"), w, h, &px_clean)?;
    write_pgm(&args.outdir.join("noisy.pgm"), w, h, &px_noisy)?;

    let waveform_mse = mse(&clean, &noisy)?;
    let pixel_delta = px_clean
        .iter()
        .zip(&px_noisy)
        .map(|(&a, &b)| f64::from(a.abs_diff(b)))
        .sum::<f64>()
        / px_clean.len() as f64;
    println!("waveform mse {waveform_mse:.4e}");
    println!("mean spectrogram pixel delta {pixel_delta:.2}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_strings_expand_as_documented() {
        assert_eq!(parse_widths("2x256").unwrap(), vec![256, 256]);
        assert_eq!(parse_widths("1x128").unwrap(), vec![128]);
        assert_eq!(parse_widths("0").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_widths("").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_widths("256,128").unwrap(), vec![256, 128]);
        assert_eq!(parse_widths("2x64, 32").unwrap(), vec![64, 64, 32]);
        assert_eq!(parse_widths("0x64").unwrap(), Vec::<usize>::new());
        assert!(parse_widths("2x").is_err());
        assert!(parse_widths("x64").is_err());
        assert!(parse_widths("2x0").is_err());
        assert!(parse_widths("abc").is_err());
    }

    #[test]
    fn exit_codes_follow_sysexits_buckets() {
        assert_eq!(exit_code(&Error::InvalidArg("x".into())), 64);
        assert_eq!(exit_code(&Error::EmptyBatch), 64);
        assert_eq!(exit_code(&Error::BadMagic), 65);
        assert_eq!(exit_code(&Error::WavFormat("x".into())), 65);
        assert_eq!(exit_code(&Error::NonFiniteLoss { iteration: 3 }), 70);
        assert_eq!(
            exit_code(&Error::Io {
                path: "x".into(),
                source: std::io::Error::other("y"),
            }),
            74
        );
    }

    #[test]
    fn cli_parses_the_documented_defaults() {
        let cli = Cli::try_parse_from(["ssir", "compress", "in.wav", "out.ssir"]).unwrap();
        match cli.command {
            Command::Compress(a) => {
                assert_eq!(a.iters, 2500);
                assert_eq!(a.lr, 1e-4);
                assert_eq!(a.weight_decay, 1e-5);
                assert_eq!(a.omega0, 100.0);
                assert_eq!(a.omega, 100.0);
                assert_eq!(a.pe_levels, 16);
                assert_eq!(a.pe_sigma, 2.0);
                assert_eq!(a.alpha, 2.0);
                assert_eq!(a.shared, "2x256");
                assert_eq!(a.siamese, "1x128");
                assert_eq!(a.crop_secs, 10.0);
                assert_eq!(a.peak, 0.95);
                assert!(!a.no_quantize);
                assert_eq!(a.seed, 0);
                assert_eq!(a.batch_size, 0);
            }
            _ => panic!("parsed the wrong command"),
        }

        let cli = Cli::try_parse_from(["ssir", "decompress", "a.ssir", "b.wav"]).unwrap();
        match cli.command {
            Command::Decompress(a) => {
                assert_eq!(a.head, HeadChoice::Mean);
                assert_eq!(a.format, FormatChoice::Pcm16);
                assert!(!a.no_denoise);
            }
            _ => panic!("parsed the wrong command"),
        }
    }

    #[test]
    fn head_choice_accepts_numeric_names() {
        let cli =
            Cli::try_parse_from(["ssir", "decompress", "a.ssir", "b.wav", "--head", "0"]).unwrap();
        match cli.command {
            Command::Decompress(a) => assert_eq!(a.head, HeadChoice::Zero),
            _ => panic!("parsed the wrong command"),
        }
        let cli =
            Cli::try_parse_from(["ssir", "decompress", "a.ssir", "b.wav", "--head", "1"]).unwrap();
        match cli.command {
            Command::Decompress(a) => assert_eq!(a.head, HeadChoice::One),
            _ => panic!("parsed the wrong command"),
        }
    }

    #[test]
    fn pixel_rendering_flips_rows_and_clamps() {
        // Two bands, one frame: band 1 at the clip peak, band 0 far below.
        let lm = ndarray::array![[-9.0], [0.0]];
        let (w, h, px) = mel_pixels(&lm);
        assert_eq!((w, h), (1, 2));
        assert_eq!(px[0], 255, "top row is the loud high band");
        assert_eq!(px[1], 0, "90 dB below peak clamps to black");

        let silent = ndarray::Array2::from_elem((3, 4), -10.0);
        let (_, _, px) = mel_pixels(&silent);
        assert!(px.iter().all(|&p| p == 0), "flat input renders black");
    }
}
