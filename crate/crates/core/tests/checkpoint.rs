mod common;

use frnet::checkpoint::{self, Checkpoint, MAGIC, VERSION};
use frnet::data::{Orientation, ScalingRecord};
use frnet::models::*;
use frnet::optim::AdamConfig;
use frnet::tensor::Tensor;
use frnet::Error;
use rand::Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn trained_encoder() -> (Network, frnet::optim::AdamState, Vec<Vec<f32>>) {
    let cfg = ModelConfig {
        ae_hidden: vec![36],
        ..ModelConfig::default()
    };
    let mut net = Network::new(build_frnet1(&cfg).unwrap(), 21).unwrap();
    let mut adam = net.new_optimizer(AdamConfig::default());
    let mut rng = common::rng(3);
    let rows: Vec<Vec<f32>> = (0..6).map(|_| (0..1476).map(|_| rng.random::<f32>()).collect()).collect();
    let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    let x = ae_batch(&refs, Orientation::Tall).unwrap();
    let y = Tensor::from_vec([6, 1476], rows.concat()).unwrap();
    for step in 0..3 {
        net.train_step(x.clone(), y.clone(), step, &mut adam).unwrap();
    }
    (net, adam, rows)
}

#[test]
fn reloaded_encoder_reproduces_feature_rows() {
    let (mut net, adam, rows) = trained_encoder();
    let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    let before = extract_features(&mut net, &refs, Orientation::Tall, 4).unwrap();
    let scaling = ScalingRecord {
        min: vec![0.0; 1476],
        max: vec![1.0; 1476],
    };
    let ckpt = Checkpoint::from_network(&net, 21, 99, Some(scaling), Some(&adam));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.frnt");
    checkpoint::save(&ckpt, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let mut again = loaded.network().unwrap();
    let after = extract_features(&mut again, &refs, Orientation::Tall, 4).unwrap();
    let bits = |v: &Vec<Vec<f32>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after));
    assert_eq!(after[0].len(), 36);
}

#[test]
fn layout_is_readable_without_the_library() {
    let (net, adam, _) = trained_encoder();
    let ckpt = Checkpoint::from_network(&net, 21, 0xabc, None, Some(&adam));
    let bytes = ckpt.to_bytes().unwrap();
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    assert_eq!(u64::from_le_bytes(trailer.try_into().unwrap()), fnv1a(body));
    assert_eq!(&bytes[..4], MAGIC);

    let end = body.windows(4).position(|w| w == b"end\n").unwrap() + 4;
    let preamble = std::str::from_utf8(&body[..end]).unwrap();
    let mut lines = preamble.lines();
    assert_eq!(lines.next(), Some(format!("FRNT {VERSION}").as_str()));
    let mut spec_bytes = 0;
    let mut scaling_bytes = usize::MAX;
    let mut params = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(' ').collect();
        match f[0] {
            "kind" => assert_eq!(f[1], "frnet1"),
            "seed" => assert_eq!(f[1], "21"),
            "config-digest" => assert_eq!(u64::from_str_radix(f[1], 16).unwrap(), 0xabc),
            "hash" => assert_eq!(f[1], "fnv1a-64"),
            "spec-bytes" => spec_bytes = f[1].parse().unwrap(),
            "scaling-bytes" => scaling_bytes = f[1].parse().unwrap(),
            "param" => {
                let dims: Vec<usize> = f[2].split('x').map(|d| d.parse().unwrap()).collect();
                params.push((f[1].to_string(), dims, f[3].parse::<usize>().unwrap(), f[4].parse::<usize>().unwrap()));
            }
            _ => {}
        }
    }
    assert_eq!(scaling_bytes, 0);
    let spec: NetworkSpec = serde_json::from_slice(&body[end..end + spec_bytes]).unwrap();
    assert_eq!(&spec, net.spec());
    let block = &body[end + spec_bytes..];
    let floats = |i: usize| f32::from_le_bytes(block[4 * i..4 * i + 4].try_into().unwrap());
    let mut expected_offset = 0;
    for ((name, dims, offset, count), (pname, t)) in params.iter().zip(net.params()) {
        assert_eq!(name, pname);
        assert_eq!(dims.as_slice(), t.dims());
        assert_eq!(*offset, expected_offset);
        assert_eq!(*count, t.len());
        for (k, v) in t.data().iter().enumerate() {
            assert_eq!(floats(offset + k).to_bits(), v.to_bits());
        }
        expected_offset += count;
    }
    // Parameters, then first and second moments.
    assert_eq!(block.len(), 3 * 4 * expected_offset);
}

#[test]
fn every_sampled_corruption_fails_closed() {
    let (net, adam, _) = trained_encoder();
    let bytes = Checkpoint::from_network(&net, 1, 2, None, Some(&adam)).to_bytes().unwrap();
    let mut rng = common::rng(12);
    for _ in 0..300 {
        let mut bad = bytes.clone();
        let i = rng.random_range(8..bytes.len());
        bad[i] ^= 1 << rng.random_range(0..8);
        assert!(Checkpoint::from_bytes(&bad).is_err(), "flip at {i} accepted");
    }
    for _ in 0..100 {
        let cut = rng.random_range(0..bytes.len());
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "truncation to {cut} accepted");
    }
    let mut payload_flip = bytes.clone();
    let n = bytes.len();
    payload_flip[n - 100] ^= 0x80;
    assert!(matches!(Checkpoint::from_bytes(&payload_flip), Err(Error::Checksum { .. })));
}

#[test]
fn version_and_magic_are_checked_before_the_checksum() {
    let (net, _, _) = trained_encoder();
    let mut bytes = Checkpoint::from_network(&net, 1, 2, None, None).to_bytes().unwrap();
    bytes[5] = b'9';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::VersionMismatch { found: 9, supported: 1 })));
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::BadMagic)));
}

#[test]
fn spec_mismatch_is_rejected_on_load() {
    let (net, _, _) = trained_encoder();
    let good = Checkpoint::from_network(&net, 1, 2, None, None);
    let mut swapped = good.clone();
    swapped.params.swap(0, 1);
    assert!(swapped.to_bytes().is_err());
    assert!(swapped.network().is_err());
}
