use bnnlab::concept::{train_encoder, EncoderConfig};
use bnnlab::pipeline::run::load_fv_corpus;
use ndarray::Array1;

fn main() {
    let corpus: Vec<_> = load_fv_corpus(std::path::Path::new("/tmp/bnnlab-fig3"))
        .unwrap().into_iter().map(|(_, i)| i).collect();
    println!("corpus {}", corpus.len());
    for (label, epochs, lr, batch, trunk) in [
        ("base", 60usize, 0.05f64, 24usize, vec![16usize, 32, 64]),
        ("long", 120, 0.1, 16, vec![16, 32, 64]),
        ("wide", 120, 0.1, 16, vec![24, 48, 96]),
    ] {
        let cfg = EncoderConfig {
            input_side: 32,
            trunk_channels: trunk,
            head_hidden: 64,
            head_out: 32,
            epochs, batch_size: batch, learning_rate: lr,
            seed: 3,
            ..EncoderConfig::for_side(32)
        };
        let (enc, losses) = train_encoder(&corpus, &cfg).unwrap();
        let latents: Vec<Array1<f64>> = corpus.iter().map(|v| enc.embed(v).unwrap()).collect();
        let norms: Vec<f64> = latents.iter().map(|z| z.dot(z).sqrt()).collect();
        let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
        // pairwise distance spread
        let mut ds = vec![];
        for i in 0..latents.len() { for j in (i+1)..latents.len() {
            ds.push((&latents[i] - &latents[j]).mapv(|v| v*v).sum().sqrt());
        }}
        ds.sort_by(|a,b| a.partial_cmp(b).unwrap());
        println!("{label}: loss {:.3}->{:.3} | latent mean-norm {:.4} | dist q10 {:.5} med {:.5} q90 {:.5}",
            losses[0], losses.last().unwrap(), mean_norm,
            ds[ds.len()/10], ds[ds.len()/2], ds[9*ds.len()/10]);
    }
}
