//! Reads a CoNLL-U block, builds the token adjacency and prints the hop
//! neighbourhoods an N-layer graph transformer can see.

use std::path::Path;

use gtae::graph::{augment_with_style_node, build_adjacency, parse_conllu, validate_heads, EdgeFlags};

const PARSE: &str = "\
# text = the staff was very friendly
1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_
2\tstaff\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\twas\t_\tAUX\t_\t_\t0\troot\t_\t_
4\tvery\t_\tADV\t_\t_\t5\tadvmod\t_\t_
5\tfriendly\t_\tADJ\t_\t_\t3\txcomp\t_\t_

";

fn main() -> gtae::Result<()> {
    let sentences = parse_conllu(PARSE, Path::new("<inline>"))?;
    let s = &sentences[0];
    validate_heads(&s.heads).map_err(gtae::Error::Structure)?;
    println!("tokens {:?}\nheads  {:?}", s.tokens, s.heads);

    let adj = build_adjacency(&s.heads, EdgeFlags::default());
    println!("\nadjacency (symmetric, self loops):");
    for i in 0..adj.size() {
        let row: String = adj.row(i).iter().map(|&b| if b { '1' } else { '.' }).collect();
        println!("  {:>9} {row}", s.tokens[i]);
    }

    let with_style = augment_with_style_node(&adj)?;
    println!("\nwith the style node appended: {} nodes, style node sees every token: {}", with_style.size(), with_style.row(adj.size()).iter().all(|&b| b));

    for hops in 1..=3 {
        let ball = adj.ball(0, hops);
        let seen: Vec<&str> = s.tokens.iter().zip(&ball).filter(|(_, &b)| b).map(|(t, _)| t.as_str()).collect();
        println!("{hops}-hop neighbourhood of {:?}: {seen:?}", s.tokens[0]);
    }
    Ok(())
}
