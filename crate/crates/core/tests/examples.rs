mod obs_solve {
    include!("../examples/obs_solve.rs");

    #[test]
    fn runs() {
        main().unwrap();
    }
}

mod gradient_check {
    include!("../examples/gradient_check.rs");

    #[test]
    fn runs() {
        main().unwrap();
    }
}
