// The differentiable kernel on its own: build a two-layer network, run a
// window forward and compare full and truncated reverse passes.

use ndarray::Array2;
use quantnet::nn::{add_layer, GradBuffer, LayerKind, LayerShape, Masks, NetLayer, Network, ParamStore, Stage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> quantnet::Result<()> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layer = |prefix: &str, kind, input, output| {
        add_layer(&mut store, &LayerShape { prefix: prefix.into(), kind, input, output }, &mut rng)
    };
    let enc = layer("enc", LayerKind::Lstm, 2, 5)?;
    let dec = layer("dec", LayerKind::Lstm, 5, 5)?;
    let head = layer("head", LayerKind::Affine, 5, 2)?;
    let net = Network::new(
        vec![
            NetLayer { params: enc, stage: Stage::Encoder, dropout: 0.0 },
            NetLayer { params: dec, stage: Stage::Decoder, dropout: 0.0 },
        ],
        head,
    )?;

    let inputs = Array2::from_shape_fn((2, 12), |(j, t)| ((t * 3 + j) as f64).sin() * 0.02);
    let fwd = net.forward(&store, inputs.view(), &net.zero_state(), Masks::Off)?;
    println!("signals at last step: {:?}", fwd.tape.signal(11));

    let d = Array2::from_elem((2, 12), 1.0);
    let norm = |h: Option<usize>| -> quantnet::Result<f64> {
        let mut buf = GradBuffer::new();
        net.backward(&store, &fwd.tape, d.view(), h, &mut buf)?;
        Ok(buf.iter().flat_map(|(_, g)| g.iter()).map(|g| g * g).sum::<f64>().sqrt())
    };
    for h in [Some(1), Some(4), None] {
        println!("horizon {h:?}: gradient norm {:.6}", norm(h)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
