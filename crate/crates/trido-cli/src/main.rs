fn main() {
    println!("trido");
}
